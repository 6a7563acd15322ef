//! Dense real linear algebra for kernel-sized problems (n up to a few hundred).
//!
//! Everything here is a pure function of its inputs. Symmetric
//! eigendecomposition uses cyclic Jacobi rotations; SPD solves use Cholesky.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative asymmetry accepted by routines that require a symmetric input.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Off-diagonal Frobenius threshold, relative to `‖M‖_F`, that ends the Jacobi sweeps.
pub const JACOBI_TOL: f64 = 1e-12;

pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Row-major dense matrix of finite reals.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    /// `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut data = Vec::with_capacity(u.len() * v.len());
        for &a in u {
            data.extend(v.iter().map(|&b| a * b));
        }
        Self {
            rows: u.len(),
            cols: v.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    /// `A Aᵀ`, the Gram matrix of the rows.
    pub fn gram(&self) -> Self {
        let n = self.rows;
        let mut g = Self::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = dot(self.row(i), self.row(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self + s·I`.
    pub fn add_diag(&self, s: f64) -> Self {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] += s;
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(A + Aᵀ)/2`.
    pub fn symmetrize(&self) -> Result<Self> {
        self.require_square()?;
        let mut m = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }

    /// Largest `|a_ij − a_ji|` relative to the largest entry.
    pub fn relative_asymmetry(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    pub fn require_square(&self) -> Result<()> {
        if !self.is_square() {
            return Err(Error::Shape(format!(
                "expected a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    pub fn require_symmetric(&self, tol: f64) -> Result<()> {
        self.require_square()?;
        let asym = self.relative_asymmetry();
        if asym > tol {
            return Err(Error::Shape(format!(
                "matrix is not symmetric (relative asymmetry {asym:e} > {tol:e})"
            )));
        }
        Ok(())
    }

    /// Keeps the listed rows and columns, in the given order.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut m = Self::zeros(rows.len(), cols.len());
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                m[(i, j)] = self[(r, c)];
            }
        }
        m
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Eigenvalues in ascending order with the matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl EigenDecomposition {
    pub fn lambda_min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn lambda_max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i)
    }

    /// `Q diag(f(λ)) Qᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let n = self.values.len();
        let q = &self.vectors;
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = (0..n).map(|k| q[(i, k)] * fl[k] * q[(j, k)]).sum();
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.map_spectrum(|l| l)
    }

    /// Coordinates of `v` in the eigenbasis, `Qᵀv`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let n = self.values.len();
        (0..n)
            .map(|k| (0..n).map(|i| self.vectors[(i, k)] * v[i]).sum())
            .collect()
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(m: &DenseMatrix) -> Result<EigenDecomposition> {
    m.require_symmetric(SYMMETRY_TOL)?;
    let n = m.rows();
    let mut a = m.symmetrize()?;
    let mut v = DenseMatrix::identity(n);
    let scale = a.frobenius_norm();

    let off_norm = |a: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    let mut off = off_norm(&a);
    while off > JACOBI_TOL * scale {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, off });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + theta.hypot(1.0))
                } else {
                    -1.0 / (-theta + theta.hypot(1.0))
                };
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
        sweeps += 1;
        off = off_norm(&a);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = v.submatrix(&(0..n).collect::<Vec<_>>(), &order);
    Ok(EigenDecomposition { values, vectors })
}

// A ← JᵀAJ and V ← VJ for the plane rotation J(p, q; c, s).
fn rotate(a: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Lower-triangular Cholesky factor, or `None` when a pivot is not positive.
pub fn cholesky(m: &DenseMatrix) -> Option<DenseMatrix> {
    let n = m.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

pub(crate) fn cholesky_solve(l: &DenseMatrix, rhs: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
        y[i] = (rhs[i] - s) / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| l[(k, i)] * x[k]).sum();
        x[i] = (y[i] - s) / l[(i, i)];
    }
    x
}

/// Solves `m x = rhs` for symmetric positive definite `m`.
///
/// When the factorization fails the jittered matrix from [`jitter_spd`] is
/// tried once before giving up with a singularity error.
pub fn spd_solve(m: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    m.require_symmetric(SYMMETRY_TOL)?;
    if rhs.len() != m.rows() {
        return Err(Error::Shape(format!(
            "rhs length {} does not match {}x{} system",
            rhs.len(),
            m.rows(),
            m.cols()
        )));
    }
    let m = m.symmetrize()?;
    if let Some(l) = cholesky(&m) {
        return Ok(cholesky_solve(&l, rhs));
    }
    let singular = |m: &DenseMatrix| -> Error {
        let lambda_min = sym_eig(m).map(|e| e.lambda_min()).unwrap_or(f64::NAN);
        Error::Singular {
            lambda_min,
            context: "SPD solve".into(),
        }
    };
    let jittered = jitter_spd(&m).map_err(|_| singular(&m))?;
    match cholesky(&jittered) {
        Some(l) => Ok(cholesky_solve(&l, rhs)),
        None => Err(singular(&jittered)),
    }
}

/// Inverse square root `m^{-1/2}` of an SPD matrix, jittering first if the
/// smallest eigenvalue is not positive.
pub fn inv_sqrt(m: &DenseMatrix) -> Result<DenseMatrix> {
    let mut eig = sym_eig(m)?;
    if eig.lambda_min() <= 0.0 {
        eig = sym_eig(&jitter_spd(m)?)?;
        if eig.lambda_min() <= 0.0 {
            return Err(Error::Singular {
                lambda_min: eig.lambda_min(),
                context: "inverse square root".into(),
            });
        }
    }
    Ok(eig.map_spectrum(|l| 1.0 / l.sqrt()))
}

/// Spectral norm of a symmetric matrix, `max |λ_i|`.
pub fn spectral_norm(m: &DenseMatrix) -> Result<f64> {
    let eig = sym_eig(m)?;
    Ok(eig.lambda_min().abs().max(eig.lambda_max().abs()))
}

/// Largest singular value of an arbitrary rectangular matrix, through the
/// eigenvalues of the smaller Gram matrix.
pub fn operator_norm(m: &DenseMatrix) -> Result<f64> {
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(0.0);
    }
    let g = if m.rows() <= m.cols() {
        m.gram()
    } else {
        m.transpose().gram()
    };
    Ok(sym_eig(&g)?.lambda_max().max(0.0).sqrt())
}

/// Regularized condition number `κ(K+σI) = (λ_max+σ)/(λ_min+σ)`.
pub fn cond_number(eig: &EigenDecomposition, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let lo = eig.lambda_min() + sigma;
    let hi = eig.lambda_max() + sigma;
    if lo <= 0.0 {
        return Err(Error::Singular {
            lambda_min: eig.lambda_min(),
            context: "regularized condition number".into(),
        });
    }
    Ok((hi / lo).max(1.0))
}

/// Diagonal shift used to make PSD kernels strictly positive definite.
pub fn jitter_amount(m: &DenseMatrix) -> f64 {
    let n = m.rows().max(1) as f64;
    (1e-10 * m.trace() / n).max(1e-12)
}

/// Returns `m + εI` with `ε = max(1e-12, 1e-10·tr(m)/n)`.
pub fn jitter_spd(m: &DenseMatrix) -> Result<DenseMatrix> {
    m.require_symmetric(SYMMETRY_TOL)?;
    let n = m.rows().max(1) as f64;
    let eig = sym_eig(m)?;
    let floor = -1e-10 * m.trace().abs() / n;
    if eig.lambda_min() < floor {
        return Err(Error::NotPsd {
            lambda_min: eig.lambda_min(),
        });
    }
    Ok(m.add_diag(jitter_amount(m)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DenseMatrix::new(
            n,
            n,
            (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        a.gram().add_diag(0.1)
    }

    fn orthonormality_error(q: &DenseMatrix) -> f64 {
        q.transpose()
            .matmul(q)
            .unwrap()
            .sub(&DenseMatrix::identity(q.cols()))
            .unwrap()
            .max_abs()
    }

    #[test]
    fn identity_eigenvalues() {
        let e = sym_eig(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_eigenpairs_are_axes() {
        let e = sym_eig(&DenseMatrix::from_diag(&[5.0, 3.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 5.0]);
        assert_eq!(
            e.vector(0).iter().map(|v| v.abs()).collect::<Vec<_>>(),
            vec![0.0, 1.0]
        );
        assert_eq!(
            e.vector(1).iter().map(|v| v.abs()).collect::<Vec<_>>(),
            vec![1.0, 0.0]
        );
    }

    #[test]
    fn two_by_two_characteristic_polynomial() {
        // det([[2-l,1],[1,2-l]]) = (2-l)^2 - 1 → l ∈ {1, 3}
        let m = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eig(&m).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
        assert!((spectral_norm(&m).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        let rect = DenseMatrix::zeros(2, 3);
        assert!(matches!(sym_eig(&rect), Err(Error::Shape(_))));
        let asym = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&asym), Err(Error::Shape(_))));
        assert!(matches!(spectral_norm(&asym), Err(Error::Shape(_))));
    }

    #[test]
    fn matches_nalgebra_eigenvalues() {
        for seed in 0..10 {
            let n = 3 + seed as usize * 3;
            let m = random_symmetric(n, seed);
            let ours = sym_eig(&m).unwrap();
            let na = nalgebra::DMatrix::from_row_slice(n, n, m.as_slice());
            let mut theirs: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
            theirs.sort_by(f64::total_cmp);
            for (a, b) in ours.values.iter().zip(&theirs) {
                assert!((a - b).abs() < 1e-10, "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn spd_solve_small_cases() {
        let x = spd_solve(&DenseMatrix::identity(3), &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 3.0]);
        let x = spd_solve(&DenseMatrix::from_diag(&[2.0, 4.0]), &[2.0, 4.0]).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-15), "{x:?}");
    }

    #[test]
    fn spd_solve_reports_lambda_min_for_indefinite() {
        let m = DenseMatrix::from_diag(&[1.0, -1.0]);
        match spd_solve(&m, &[1.0, 1.0]) {
            Err(Error::Singular { lambda_min, .. }) => assert!((lambda_min + 1.0).abs() < 1e-12),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn inv_sqrt_diagonal() {
        let r = inv_sqrt(&DenseMatrix::from_diag(&[4.0, 9.0])).unwrap();
        assert!((r[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((r[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!(r[(0, 1)].abs() < 1e-15);
        let i = inv_sqrt(&DenseMatrix::identity(4)).unwrap();
        assert!(i.sub(&DenseMatrix::identity(4)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn spectral_norm_examples() {
        assert_eq!(spectral_norm(&DenseMatrix::zeros(3, 3)).unwrap(), 0.0);
        assert_eq!(
            spectral_norm(&DenseMatrix::from_diag(&[-2.0, 1.0])).unwrap(),
            2.0
        );
    }

    #[test]
    fn operator_norm_of_row_vector_is_euclidean_norm() {
        let m = DenseMatrix::new(1, 2, vec![3.0, 4.0]).unwrap();
        assert!((operator_norm(&m).unwrap() - 5.0).abs() < 1e-12);
        assert!((operator_norm(&m.transpose()).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn cond_number_examples() {
        let eye = sym_eig(&DenseMatrix::identity(4)).unwrap();
        assert_eq!(cond_number(&eye, 1e-4).unwrap(), 1.0);
        let e = sym_eig(&DenseMatrix::from_diag(&[0.0, 1.0])).unwrap();
        assert!((cond_number(&e, 1e-4).unwrap() - 10001.0).abs() < 1e-8);
        assert!(matches!(cond_number(&e, 0.0), Err(Error::Domain(_))));
        assert!(matches!(cond_number(&e, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn jitter_examples() {
        let j = jitter_spd(&DenseMatrix::identity(2)).unwrap();
        let eps = 1e-10f64.max(1e-12);
        assert!((j[(0, 0)] - (1.0 + eps)).abs() < 1e-16);
        let z = jitter_spd(&DenseMatrix::zeros(2, 2)).unwrap();
        assert_eq!(z, DenseMatrix::from_diag(&[1e-12, 1e-12]));

        let v = [1.0, 2.0, 2.0];
        let rank1 = DenseMatrix::outer(&v, &v);
        let eps = jitter_amount(&rank1);
        assert!((eps - 1e-10 * 9.0 / 3.0).abs() < 1e-24);
        let e = sym_eig(&jitter_spd(&rank1).unwrap()).unwrap();
        assert!((e.lambda_min() - eps).abs() < 1e-13, "{}", e.lambda_min());

        let neg = DenseMatrix::from_diag(&[1.0, -0.5]);
        assert!(matches!(jitter_spd(&neg), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn shape_and_finiteness_validation() {
        assert!(matches!(
            DenseMatrix::new(2, 2, vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Domain(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn eig_reconstructs_and_is_orthonormal(n in 1usize..=24, seed in any::<u64>()) {
            let m = random_symmetric(n, seed);
            let e = sym_eig(&m).unwrap();
            let resid = e.reconstruct().sub(&m).unwrap().frobenius_norm() / m.frobenius_norm().max(1e-300);
            prop_assert!(resid <= 1e-10, "residual {resid}");
            prop_assert!(orthonormality_error(&e.vectors) <= 1e-10 * n as f64);
            prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn spd_solve_residual(n in 2usize..=32, seed in any::<u64>()) {
            let m = random_spd(n, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = spd_solve(&m, &b).unwrap();
            let mx = m.matvec(&x).unwrap();
            let r: Vec<f64> = mx.iter().zip(&b).map(|(a, b)| a - b).collect();
            prop_assert!(norm2(&r) <= 1e-8 * norm2(&b));
        }

        #[test]
        fn inv_sqrt_whitens(n in 2usize..=32, seed in any::<u64>()) {
            let m = random_spd(n, seed);
            let r = inv_sqrt(&m).unwrap();
            let rmr = r.matmul(&m).unwrap().matmul(&r).unwrap();
            prop_assert!(rmr.sub(&DenseMatrix::identity(n)).unwrap().max_abs() <= 1e-8);
        }

        #[test]
        fn cond_number_at_least_one(n in 1usize..=16, seed in any::<u64>(), sigma in 1e-6f64..10.0) {
            let m = random_spd(n, seed);
            let e = sym_eig(&m).unwrap();
            let k = cond_number(&e, sigma).unwrap();
            prop_assert!(k >= 1.0);
            let direct = (e.lambda_max() + sigma) / (e.lambda_min() + sigma);
            prop_assert!((k - direct).abs() <= 1e-12 * direct);
        }
    }
}
