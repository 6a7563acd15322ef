//! Empirical neural tangent kernels, kernel ridge regression on them, and the
//! spectral risk bounds of the resulting predictor.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, cholesky, DenseMatrix, EigenDecomposition};
use crate::model::{Model, ParamVector, SegmentId};

/// Default ridge parameter σ for kernel regression and condition numbers.
pub const DEFAULT_SIGMA: f64 = 1e-4;

/// Default number of samples drawn when sketching a kernel.
pub const DEFAULT_SKETCH_SIZE: usize = 32;

/// Where a kernel came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub subset: Vec<SegmentId>,
    pub sample_indices: Vec<usize>,
    pub seed: Option<u64>,
    /// Set when every Jacobian row is zero, i.e. the parameters have no
    /// gradient on these samples.
    pub zero_kernel: bool,
}

/// Symmetric PSD kernel matrix with its cached eigendecomposition.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    matrix: DenseMatrix,
    eig: EigenDecomposition,
    pub provenance: Provenance,
}

impl KernelMatrix {
    /// Validates symmetry (1e-10 relative) and PSD-ness
    /// (`λ_min ≥ −1e-8·λ_max`) before caching the eigendecomposition.
    pub fn new(matrix: DenseMatrix, provenance: Provenance) -> Result<Self> {
        matrix.require_symmetric(1e-10)?;
        let matrix = matrix.symmetrize()?;
        let eig = linalg::sym_eig(&matrix)?;
        if eig.lambda_min() < -1e-8 * eig.lambda_max().max(0.0) {
            return Err(Error::NotPsd {
                lambda_min: eig.lambda_min(),
            });
        }
        Ok(Self {
            matrix,
            eig,
            provenance,
        })
    }

    pub fn from_matrix(matrix: DenseMatrix) -> Result<Self> {
        Self::new(matrix, Provenance::default())
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn eig(&self) -> &EigenDecomposition {
        &self.eig
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn lambda_min(&self) -> f64 {
        self.eig.lambda_min()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eig.lambda_max()
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.max_abs() == 0.0
    }

    /// `κ(K+σI)`.
    pub fn cond_number(&self, sigma: f64) -> Result<f64> {
        linalg::cond_number(&self.eig, sigma)
    }

    /// Sum of two kernels on the same samples; provenance subsets are merged.
    pub fn add(&self, other: &KernelMatrix) -> Result<KernelMatrix> {
        let mut prov = self.provenance.clone();
        prov.subset.extend(other.provenance.subset.iter().copied());
        prov.subset.sort();
        prov.subset.dedup();
        prov.zero_kernel = self.provenance.zero_kernel && other.provenance.zero_kernel;
        KernelMatrix::new(self.matrix.add(&other.matrix)?, prov)
    }

    pub fn scale(&self, s: f64) -> Result<KernelMatrix> {
        KernelMatrix::new(self.matrix.scale(s), self.provenance.clone())
    }
}

fn gram_kernel(
    jac: &DenseMatrix,
    subset: &[SegmentId],
    indices: Vec<usize>,
) -> Result<KernelMatrix> {
    let zero = jac.max_abs() == 0.0;
    KernelMatrix::new(
        jac.gram(),
        Provenance {
            subset: subset.to_vec(),
            sample_indices: indices,
            seed: None,
            zero_kernel: zero,
        },
    )
}

/// `K = ∇f_θ(X) ∇f_θ(X)ᵀ` with gradients restricted to `subset`.
pub fn empirical_ntk(
    model: &Model,
    theta: &ParamVector,
    x: &DenseMatrix,
    subset: &[SegmentId],
) -> Result<KernelMatrix> {
    if x.rows() == 0 {
        return Err(Error::Domain("kernel needs at least one sample".into()));
    }
    let jac = model.jacobian(theta, x, subset)?;
    gram_kernel(&jac, subset, (0..x.rows()).collect())
}

/// Kernel induced by a single parameter segment.
pub fn layer_kernel(
    model: &Model,
    theta: &ParamVector,
    x: &DenseMatrix,
    layer: SegmentId,
) -> Result<KernelMatrix> {
    empirical_ntk(model, theta, x, &[layer])
}

/// One kernel per model layer (all segments of the layer together), in
/// ascending layer order. Their sum is the full-parameter kernel.
pub fn per_layer_kernels(
    model: &Model,
    theta: &ParamVector,
    x: &DenseMatrix,
) -> Result<Vec<(usize, KernelMatrix)>> {
    let map = model.layer_map();
    map.layers()
        .into_iter()
        .map(|l| {
            let segs = map.layer_segments(l);
            empirical_ntk(model, theta, x, &segs).map(|k| (l, k))
        })
        .collect()
}

/// Kernel on `m` samples drawn uniformly without replacement.
pub fn sketch_ntk(
    model: &Model,
    theta: &ParamVector,
    data: &Dataset,
    subset: &[SegmentId],
    m: usize,
    seed: u64,
) -> Result<KernelMatrix> {
    if m == 0 || m > data.n() {
        return Err(Error::Domain(format!(
            "sketch size {m} must lie in 1..={}",
            data.n()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = index::sample(&mut rng, data.n(), m).into_vec();
    let rows = data.select(&indices)?;
    let jac = model.jacobian(theta, &rows.x, subset)?;
    let mut k = gram_kernel(&jac, subset, indices)?;
    k.provenance.seed = Some(seed);
    Ok(k)
}

/// Dual solution `α = (K+σI)⁻¹Y` of kernel ridge regression.
#[derive(Clone, Debug)]
pub struct KernelRegressor {
    pub alpha: Vec<f64>,
    pub sigma: f64,
    /// Kernel predictions on the training inputs, `K·α`.
    pub train_predictions: Vec<f64>,
    pub subset: Vec<SegmentId>,
}

pub fn fit_kernel_regression(k: &KernelMatrix, y: &[f64], sigma: f64) -> Result<KernelRegressor> {
    if y.len() != k.n() {
        return Err(Error::Shape(format!(
            "{} targets for a {}x{} kernel",
            y.len(),
            k.n(),
            k.n()
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("sigma must be >= 0, got {sigma}")));
    }
    let system = k.matrix().add_diag(sigma);
    let alpha = if sigma == 0.0 {
        let l = cholesky(&system).ok_or(Error::Singular {
            lambda_min: k.lambda_min(),
            context: "kernel regression with sigma = 0 needs a positive definite kernel".into(),
        })?;
        linalg::cholesky_solve(&l, y)
    } else {
        linalg::spd_solve(&system, y).map_err(|e| match e {
            Error::Singular { lambda_min, .. } => Error::Singular {
                lambda_min,
                context: "K + sigma I".into(),
            },
            other => other,
        })?
    };
    let train_predictions = k.matrix().matvec(&alpha)?;
    Ok(KernelRegressor {
        alpha,
        sigma,
        train_predictions,
        subset: k.provenance.subset.clone(),
    })
}

/// Cross-kernel `K(x_new, X)` from Jacobians at `θ`, one row per new input.
pub fn cross_kernel(
    model: &Model,
    theta: &ParamVector,
    x_new: &DenseMatrix,
    x_train: &DenseMatrix,
    subset: &[SegmentId],
) -> Result<DenseMatrix> {
    let j_new = model.jacobian(theta, x_new, subset)?;
    let j_train = model.jacobian(theta, x_train, subset)?;
    j_new.matmul(&j_train.transpose())
}

/// `f*(x) = K(x, X)·α` for each row of `x_new`.
pub fn predict(
    reg: &KernelRegressor,
    model: &Model,
    theta0: &ParamVector,
    x_train: &DenseMatrix,
    x_new: &DenseMatrix,
) -> Result<Vec<f64>> {
    if x_train.rows() != reg.alpha.len() {
        return Err(Error::Shape(format!(
            "{} training inputs for {} dual coefficients",
            x_train.rows(),
            reg.alpha.len()
        )));
    }
    if reg.subset.is_empty() {
        return Err(Error::Domain(
            "regressor has no parameter subset to build cross-kernels from".into(),
        ));
    }
    let cross = cross_kernel(model, theta0, x_new, x_train, &reg.subset)?;
    cross.matvec(&reg.alpha)
}

/// Training risk `‖Y − K(K+σI)⁻¹Y‖²` in the eigenbasis:
/// `Σ_i (σ/(σ+λ_i))² (u_iᵀY)²`.
pub fn training_risk(k: &KernelMatrix, y: &[f64], sigma: f64) -> Result<f64> {
    if y.len() != k.n() {
        return Err(Error::Shape(format!(
            "{} targets for n = {}",
            y.len(),
            k.n()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let coords = k.eig().project(y);
    Ok(k.eig()
        .values
        .iter()
        .zip(&coords)
        .map(|(&l, &c)| {
            let shrink = sigma / (sigma + l);
            shrink * shrink * c * c
        })
        .sum())
}

/// `((σ‖Y‖/(σ+λ_max))², (σ‖Y‖/(σ+λ_min))²)`.
pub fn risk_bounds(k: &KernelMatrix, y: &[f64], sigma: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if y.len() != k.n() {
        return Err(Error::Shape(format!(
            "{} targets for n = {}",
            y.len(),
            k.n()
        )));
    }
    let ny = linalg::norm2(y);
    let lower = (sigma * ny / (sigma + k.lambda_max())).powi(2);
    let upper = (sigma * ny / (sigma + k.lambda_min())).powi(2);
    Ok((lower, upper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Activation, LoraConfig, ModelConfig, SegmentGroup};
    use rand::Rng;

    fn inputs(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::new(
            n,
            d,
            (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn mlp(hidden: Vec<usize>, seed: u64) -> (Model, ParamVector) {
        build_model(&ModelConfig {
            input_dim: 3,
            hidden_widths: hidden,
            activation: Activation::Tanh,
            lora: None,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn linear_weights_on_identity_inputs() {
        let (model, theta0) = build_model(&ModelConfig {
            input_dim: 2,
            hidden_widths: vec![],
            activation: Activation::Identity,
            lora: None,
            seed: 0,
        })
        .unwrap();
        let k = empirical_ntk(
            &model,
            &theta0,
            &DenseMatrix::identity(2),
            &[SegmentId::new(0, SegmentGroup::DenseWeight)],
        )
        .unwrap();
        assert_eq!(k.matrix(), &DenseMatrix::identity(2));
    }

    #[test]
    fn scalar_model_rank_one_gram() {
        let (model, theta0) = build_model(&ModelConfig {
            input_dim: 1,
            hidden_widths: vec![],
            activation: Activation::Identity,
            lora: None,
            seed: 0,
        })
        .unwrap();
        let x = DenseMatrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let k = layer_kernel(
            &model,
            &theta0,
            &x,
            SegmentId::new(0, SegmentGroup::DenseWeight),
        )
        .unwrap();
        assert_eq!(
            k.matrix(),
            &DenseMatrix::outer(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])
        );
    }

    #[test]
    fn kernel_matches_explicit_gradient_products() {
        let (model, theta0) = mlp(vec![5, 4], 3);
        let x = inputs(6, 3, 1);
        let all = model.layer_map().ids();
        let k = empirical_ntk(&model, &theta0, &x, &all).unwrap();
        // independent Gram: per-sample gradients from single-row Jacobians
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let xi = DenseMatrix::new(1, 3, x.row(i).to_vec()).unwrap();
                model.jacobian_full(&theta0, &xi).unwrap().into_vec()
            })
            .collect();
        for i in 0..6 {
            for j in 0..6 {
                let v: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                assert!((k.matrix()[(i, j)] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_kernels_sum_to_full_kernel() {
        let (model, theta0) = mlp(vec![4, 5], 8);
        let x = inputs(7, 3, 2);
        let full = empirical_ntk(&model, &theta0, &x, &model.layer_map().ids()).unwrap();
        let layers = per_layer_kernels(&model, &theta0, &x).unwrap();
        assert_eq!(layers.len(), 3);
        let mut sum = DenseMatrix::zeros(7, 7);
        for (_, k) in &layers {
            sum = sum.add(k.matrix()).unwrap();
        }
        assert!(sum.sub(full.matrix()).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn single_layer_kernel_is_full_kernel() {
        let (model, theta0) = build_model(&ModelConfig {
            input_dim: 3,
            hidden_widths: vec![],
            activation: Activation::Identity,
            lora: None,
            seed: 2,
        })
        .unwrap();
        let x = inputs(4, 3, 0);
        let full = empirical_ntk(&model, &theta0, &x, &model.layer_map().ids()).unwrap();
        let (_, layer) = per_layer_kernels(&model, &theta0, &x).unwrap().remove(0);
        assert_eq!(full.matrix(), layer.matrix());
    }

    #[test]
    fn zero_adapter_kernel_is_flagged() {
        let (model, theta0) = build_model(&ModelConfig {
            input_dim: 3,
            hidden_widths: vec![4],
            activation: Activation::Tanh,
            lora: Some(LoraConfig {
                target_layers: vec![0],
                rank: 2,
            }),
            seed: 1,
        })
        .unwrap();
        let x = inputs(5, 3, 4);
        let ka = layer_kernel(&model, &theta0, &x, SegmentId::new(0, SegmentGroup::LoraA)).unwrap();
        assert!(ka.is_zero());
        assert!(ka.provenance.zero_kernel);
        let kb = layer_kernel(&model, &theta0, &x, SegmentId::new(0, SegmentGroup::LoraB)).unwrap();
        assert!(!kb.provenance.zero_kernel);
    }

    #[test]
    fn identity_kernel_regression() {
        let k = KernelMatrix::from_matrix(DenseMatrix::identity(3)).unwrap();
        let y = [0.4, -2.0, 1.0];
        let reg = fit_kernel_regression(&k, &y, 1.0).unwrap();
        for i in 0..3 {
            assert!((reg.alpha[i] - y[i] / 2.0).abs() < 1e-15);
            assert!((reg.train_predictions[i] - y[i] / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_kernel_risk_is_quarter() {
        let k = KernelMatrix::from_matrix(DenseMatrix::identity(4)).unwrap();
        let y = [0.5, 0.5, 0.5, 0.5];
        let (lo, hi) = risk_bounds(&k, &y, 1.0).unwrap();
        assert_eq!((lo, hi), (0.25, 0.25));
        assert!((training_risk(&k, &y, 1.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn huge_sigma_bounds_approach_target_norm() {
        let k = KernelMatrix::from_matrix(DenseMatrix::from_diag(&[0.5, 2.0])).unwrap();
        let y = [3.0, 4.0];
        let (lo, hi) = risk_bounds(&k, &y, 1e12).unwrap();
        assert!((lo - 25.0).abs() < 1e-9 && (hi - 25.0).abs() < 1e-9);
        assert!(matches!(risk_bounds(&k, &y, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_sigma_needs_positive_definite_kernel() {
        let k = KernelMatrix::from_matrix(DenseMatrix::outer(&[1.0, 1.0], &[1.0, 1.0])).unwrap();
        assert!(matches!(
            fit_kernel_regression(&k, &[1.0, 0.0], 0.0),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn prediction_at_training_point_interpolates() {
        let (model, theta0) = mlp(vec![8], 5);
        let x = inputs(4, 3, 6);
        let y = vec![0.3, -0.7, 1.1, 0.2];
        let k = empirical_ntk(&model, &theta0, &x, &model.layer_map().ids()).unwrap();
        let reg = fit_kernel_regression(&k, &y, 0.0).unwrap();
        let p = predict(&reg, &model, &theta0, &x, &x).unwrap();
        for (a, b) in p.iter().zip(&y) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn prediction_equals_entrywise_sum() {
        let (model, theta0) = mlp(vec![6], 9);
        let x = inputs(5, 3, 1);
        let y: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).collect();
        let subset = model.layer_map().ids();
        let k = empirical_ntk(&model, &theta0, &x, &subset).unwrap();
        let reg = fit_kernel_regression(&k, &y, 1e-2).unwrap();
        let x_new = inputs(2, 3, 77);
        let p = predict(&reg, &model, &theta0, &x, &x_new).unwrap();
        for r in 0..2 {
            let gn = model
                .jacobian_full(
                    &theta0,
                    &DenseMatrix::new(1, 3, x_new.row(r).to_vec()).unwrap(),
                )
                .unwrap()
                .into_vec();
            let mut acc = 0.0;
            for i in 0..5 {
                let gi = model
                    .jacobian_full(&theta0, &DenseMatrix::new(1, 3, x.row(i).to_vec()).unwrap())
                    .unwrap()
                    .into_vec();
                let kv: f64 = gn.iter().zip(&gi).map(|(a, b)| a * b).sum();
                acc += reg.alpha[i] * kv;
            }
            assert!((p[r] - acc).abs() < 1e-12);
        }
        let zero = KernelRegressor {
            alpha: vec![0.0; 5],
            ..reg
        };
        assert!(predict(&zero, &model, &theta0, &x, &x_new)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn sketch_with_full_size_is_a_permutation() {
        let (model, theta0) = mlp(vec![4], 1);
        let x = inputs(10, 3, 3);
        let data = Dataset::new(x.clone(), vec![0.0; 10], "d", 0).unwrap();
        let subset = model.layer_map().ids();
        let full = empirical_ntk(&model, &theta0, &x, &subset).unwrap();
        let sk = sketch_ntk(&model, &theta0, &data, &subset, 10, 5).unwrap();
        let idx = &sk.provenance.sample_indices;
        let mut sorted = idx.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert!(
            sk.matrix()
                .sub(&full.matrix().submatrix(idx, idx))
                .unwrap()
                .max_abs()
                < 1e-14
        );
        let again = sketch_ntk(&model, &theta0, &data, &subset, 10, 5).unwrap();
        assert_eq!(again.provenance.sample_indices, *idx);
        assert!(matches!(
            sketch_ntk(&model, &theta0, &data, &subset, 11, 5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn rejects_indefinite_kernel() {
        assert!(matches!(
            KernelMatrix::from_matrix(DenseMatrix::from_diag(&[1.0, -0.1])),
            Err(Error::NotPsd { .. })
        ));
    }
}
