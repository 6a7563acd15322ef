//! Sampled Lipschitz estimates on spherical shells around `θ0`.
//!
//! Two families are provided. The input-space profile measures how fast
//! `f_θ` changes between data points for parameters drawn on shells of
//! growing radius. The parameter-space estimates measure how fast `f_θ(X)`,
//! its Jacobian and its tangent kernel change with `θ`, which is the sense
//! the deviation and linearization bounds need.
//!
//! Every shell point has its own RNG stream derived from the seed and its
//! (radius, model) index, so results do not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dynamics::TrainTrace;
use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::model::Model;

/// A scalar function of parameters and inputs with a parameter Jacobian.
pub trait ParamFunction: Sync {
    fn n_params(&self) -> usize;
    /// `f_θ(x_i)` for each row of `x`.
    fn outputs(&self, theta: &[f64], x: &DenseMatrix) -> Result<Vec<f64>>;
    /// Row `i` is `∇_θ f_θ(x_i)`.
    fn jacobian(&self, theta: &[f64], x: &DenseMatrix) -> Result<DenseMatrix>;
}

impl ParamFunction for Model {
    fn n_params(&self) -> usize {
        self.dim()
    }

    fn outputs(&self, theta: &[f64], x: &DenseMatrix) -> Result<Vec<f64>> {
        self.forward(&self.params(theta.to_vec())?, x)
    }

    fn jacobian(&self, theta: &[f64], x: &DenseMatrix) -> Result<DenseMatrix> {
        self.jacobian_full(&self.params(theta.to_vec())?, x)
    }
}

/// Sampling budget for shell estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellConfig {
    pub r_max: f64,
    pub n_radii: usize,
    pub n_models: usize,
    pub seed: u64,
    /// Keep every radius's samples when summarizing later radii. When off,
    /// each radius is summarized on its own samples.
    pub cumulative: bool,
}

impl ShellConfig {
    pub fn new(r_max: f64, seed: u64) -> Self {
        Self {
            r_max,
            n_radii: 10,
            n_models: 100,
            seed,
            cumulative: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_max >= 0.0 && self.r_max.is_finite()) {
            return Err(Error::Domain(format!(
                "r_max must be finite and >= 0, got {}",
                self.r_max
            )));
        }
        if self.n_radii == 0 || self.n_models == 0 {
            return Err(Error::Domain(
                "n_radii and n_models must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Uniform grid on `[0, r_max]`; a single radius sits at `r_max`.
    pub fn radii(&self) -> Vec<f64> {
        if self.n_radii == 1 {
            return vec![self.r_max];
        }
        let step = self.r_max / (self.n_radii - 1) as f64;
        (0..self.n_radii)
            .map(|i| {
                if i + 1 == self.n_radii {
                    self.r_max
                } else {
                    i as f64 * step
                }
            })
            .collect()
    }
}

/// `θ0 + r·v/‖v‖` with `v` standard normal from the stream of
/// (`radius_index`, `model_index`).
pub fn shell_point(
    theta0: &[f64],
    r: f64,
    cfg: &ShellConfig,
    radius_index: usize,
    model_index: usize,
) -> Vec<f64> {
    if r == 0.0 {
        return theta0.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream((radius_index * cfg.n_models + model_index) as u64);
    let v: Vec<f64> = (0..theta0.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let norm = linalg::norm2(&v);
    theta0
        .iter()
        .zip(&v)
        .map(|(t, vi)| t + r * vi / norm)
        .collect()
}

/// Per-radius summaries of the sampled values; with `cumulative` each radius
/// also sees every earlier radius's samples.
fn summarize(per_radius: &[Vec<f64>], cumulative: bool) -> (Vec<f64>, Vec<f64>) {
    let mut pool: Vec<f64> = Vec::new();
    let mut avg = Vec::with_capacity(per_radius.len());
    let mut upper = Vec::with_capacity(per_radius.len());
    for vals in per_radius {
        if !cumulative {
            pool.clear();
        }
        pool.extend_from_slice(vals);
        if pool.is_empty() {
            avg.push(0.0);
            upper.push(0.0);
        } else {
            let max = pool.iter().copied().fold(0.0, f64::max);
            // a mean of equal values can round one ulp above them
            avg.push((pool.iter().sum::<f64>() / pool.len() as f64).min(max));
            upper.push(max);
        }
    }
    (avg, upper)
}

fn over_shells<T: Send>(
    theta0: &[f64],
    cfg: &ShellConfig,
    f: impl Fn(usize, &[f64]) -> Result<T> + Sync,
) -> Result<Vec<Vec<T>>> {
    cfg.validate()?;
    cfg.radii()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            (0..cfg.n_models)
                .into_par_iter()
                .map(|j| f(i, &shell_point(theta0, r, cfg, i, j)))
                .collect()
        })
        .collect()
}

/// Input-space Lipschitz profile together with the Jacobian Lipschitz
/// estimate on the same shells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzProfile {
    pub radii: Vec<f64>,
    pub l_avg: Vec<f64>,
    pub l_upper: Vec<f64>,
    pub grad_l_upper: Vec<f64>,
    pub n_models: usize,
    pub n_pairs: usize,
    /// Pairs dropped because `x = x′`.
    pub skipped_pairs: usize,
    pub seed: u64,
    pub cumulative: bool,
}

impl LipschitzProfile {
    pub const CSV_COLUMNS: [&'static str; 4] = ["radius", "l_avg", "l_upper", "grad_l_upper"];

    pub fn rows(&self) -> Vec<[f64; 4]> {
        (0..self.radii.len())
            .map(|i| {
                [
                    self.radii[i],
                    self.l_avg[i],
                    self.l_upper[i],
                    self.grad_l_upper[i],
                ]
            })
            .collect()
    }
}

/// Input pairs `(x, x′)` as two matrices with coincident pairs removed, plus
/// the number removed.
fn pair_matrices(
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<(DenseMatrix, DenseMatrix, Vec<f64>, usize)> {
    let kept: Vec<&(Vec<f64>, Vec<f64>)> = pairs.iter().filter(|(a, b)| a != b).collect();
    let skipped = pairs.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::Domain("no pairs with distinct points".into()));
    }
    let d = kept[0].0.len();
    if kept.iter().any(|(a, b)| a.len() != d || b.len() != d) {
        return Err(Error::Shape("pairs have inconsistent dimensions".into()));
    }
    let left = DenseMatrix::new(
        kept.len(),
        d,
        kept.iter().flat_map(|p| p.0.clone()).collect(),
    )?;
    let right = DenseMatrix::new(
        kept.len(),
        d,
        kept.iter().flat_map(|p| p.1.clone()).collect(),
    )?;
    let dist = kept
        .iter()
        .map(|(a, b)| linalg::norm2(&a.iter().zip(b).map(|(u, v)| u - v).collect::<Vec<_>>()))
        .collect();
    Ok((left, right, dist, skipped))
}

/// Per shell point, the largest `|f_θ(x′) − f_θ(x)|/‖x′ − x‖` over the pairs;
/// `L_avg` and `L_upper` are the mean and max of those maxima.
pub fn estimate_lipschitz_profile(
    f: &impl ParamFunction,
    theta0: &[f64],
    pairs: &[(Vec<f64>, Vec<f64>)],
    x_grad: &DenseMatrix,
    cfg: &ShellConfig,
) -> Result<LipschitzProfile> {
    let (left, right, dist, skipped) = pair_matrices(pairs)?;
    let per_radius = over_shells(theta0, cfg, |_, theta| {
        let a = f.outputs(theta, &left)?;
        let b = f.outputs(theta, &right)?;
        Ok(a.iter()
            .zip(&b)
            .zip(&dist)
            .map(|((fa, fb), d)| (fb - fa).abs() / d)
            .fold(0.0, f64::max))
    })?;
    let (l_avg, l_upper) = summarize(&per_radius, cfg.cumulative);
    Ok(LipschitzProfile {
        radii: cfg.radii(),
        l_avg,
        l_upper,
        grad_l_upper: estimate_grad_lipschitz(f, theta0, x_grad, cfg)?,
        n_models: cfg.n_models,
        n_pairs: pairs.len() - skipped,
        skipped_pairs: skipped,
        seed: cfg.seed,
        cumulative: cfg.cumulative,
    })
}

/// Per radius, the largest `‖∇f_θ(X) − ∇f_{θ0}(X)‖/‖θ − θ0‖` over shell
/// points. The zero shell has no pairs and reports 0 unless earlier samples
/// carry over.
pub fn estimate_grad_lipschitz(
    f: &impl ParamFunction,
    theta0: &[f64],
    x: &DenseMatrix,
    cfg: &ShellConfig,
) -> Result<Vec<f64>> {
    let j0 = f.jacobian(theta0, x)?;
    let per_radius = over_shells(theta0, cfg, |_, theta| grad_ratio(f, theta0, &j0, theta, x))?;
    let per_radius: Vec<Vec<f64>> = per_radius
        .into_iter()
        .map(|v| v.into_iter().flatten().collect())
        .collect();
    Ok(summarize(&per_radius, cfg.cumulative).1)
}

fn grad_ratio(
    f: &impl ParamFunction,
    theta0: &[f64],
    j0: &DenseMatrix,
    theta: &[f64],
    x: &DenseMatrix,
) -> Result<Option<f64>> {
    let dist = distance(theta, theta0);
    if dist == 0.0 {
        return Ok(None);
    }
    let diff = f.jacobian(theta, x)?.sub(j0)?;
    Ok(Some(linalg::operator_norm(&diff)? / dist))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// Parameter-space constants at one set of sampled points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamLipschitz {
    /// `max ‖∇f_θ(X)‖` over the points, including `θ0`.
    pub lip_f: f64,
    /// `max ‖∇f_θ(X) − ∇f_{θ0}(X)‖/‖θ − θ0‖`.
    pub lip_grad: f64,
    /// `max ‖K_θ − K_{θ0}‖/‖θ − θ0‖`.
    pub lip_k: f64,
}

impl ParamLipschitz {
    pub fn max(self, other: Self) -> Self {
        Self {
            lip_f: self.lip_f.max(other.lip_f),
            lip_grad: self.lip_grad.max(other.lip_grad),
            lip_k: self.lip_k.max(other.lip_k),
        }
    }
}

fn point_constants(
    f: &impl ParamFunction,
    theta0: &[f64],
    j0: &DenseMatrix,
    k0: &DenseMatrix,
    theta: &[f64],
    x: &DenseMatrix,
) -> Result<ParamLipschitz> {
    let j = f.jacobian(theta, x)?;
    let lip_f = linalg::operator_norm(&j)?;
    let dist = distance(theta, theta0);
    if dist == 0.0 {
        return Ok(ParamLipschitz {
            lip_f,
            ..Default::default()
        });
    }
    let lip_grad = linalg::operator_norm(&j.sub(j0)?)? / dist;
    let lip_k = linalg::spectral_norm(&j.gram().sub(k0)?.symmetrize()?)? / dist;
    Ok(ParamLipschitz {
        lip_f,
        lip_grad,
        lip_k,
    })
}

/// Parameter-space constants per shell radius (cumulative per `cfg`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamProfile {
    pub radii: Vec<f64>,
    pub per_radius: Vec<ParamLipschitz>,
    pub n_models: usize,
    pub seed: u64,
}

impl ParamProfile {
    /// Constants over the whole ball of radius `r_max`.
    pub fn overall(&self) -> ParamLipschitz {
        self.per_radius
            .iter()
            .fold(ParamLipschitz::default(), |acc, p| acc.max(*p))
    }
}

pub fn estimate_param_lipschitz(
    f: &impl ParamFunction,
    theta0: &[f64],
    x: &DenseMatrix,
    cfg: &ShellConfig,
) -> Result<ParamProfile> {
    let j0 = f.jacobian(theta0, x)?;
    let k0 = j0.gram();
    let base = point_constants(f, theta0, &j0, &k0, theta0, x)?;
    let samples = over_shells(theta0, cfg, |_, theta| {
        point_constants(f, theta0, &j0, &k0, theta, x)
    })?;
    let mut running = base;
    let per_radius = samples
        .into_iter()
        .map(|pts| {
            let here = pts.into_iter().fold(base, ParamLipschitz::max);
            if cfg.cumulative {
                running = running.max(here);
                running
            } else {
                here
            }
        })
        .collect();
    Ok(ParamProfile {
        radii: cfg.radii(),
        per_radius,
        n_models: cfg.n_models,
        seed: cfg.seed,
    })
}

/// Parameter-space constants at the iterates of a training run.
pub fn trajectory_lipschitz(
    f: &impl ParamFunction,
    theta0: &[f64],
    thetas: &[Vec<f64>],
    x: &DenseMatrix,
) -> Result<ParamLipschitz> {
    let j0 = f.jacobian(theta0, x)?;
    let k0 = j0.gram();
    let base = point_constants(f, theta0, &j0, &k0, theta0, x)?;
    thetas
        .par_iter()
        .map(|t| point_constants(f, theta0, &j0, &k0, t, x))
        .try_reduce(|| base, |a, b| Ok(a.max(b)))
}

/// Largest parameter deviation `max_t ‖θ_t − θ0‖` over a run.
pub fn capture_rmax(trace: &TrainTrace) -> Result<f64> {
    if trace.records.is_empty() {
        return Err(Error::Domain("trace has no steps".into()));
    }
    Ok(trace
        .records
        .iter()
        .map(|r| r.deviation)
        .fold(0.0, f64::max))
}

/// `n_pairs` pairs of distinct sample indices drawn uniformly.
pub fn sample_pairs(
    data: &Dataset,
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    if data.n() < 2 {
        return Err(Error::Domain(
            "need at least two samples to form pairs".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_pairs)
        .map(|_| {
            let i = rng.random_range(0..data.n());
            let mut j = rng.random_range(0..data.n() - 1);
            if j >= i {
                j += 1;
            }
            (data.input(i).to_vec(), data.input(j).to_vec())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Activation, ModelConfig};

    /// `f(x) = θ²·x₀` for scalar `θ`.
    struct Quadratic;

    impl ParamFunction for Quadratic {
        fn n_params(&self) -> usize {
            1
        }
        fn outputs(&self, t: &[f64], x: &DenseMatrix) -> Result<Vec<f64>> {
            Ok((0..x.rows()).map(|i| t[0] * t[0] * x[(i, 0)]).collect())
        }
        fn jacobian(&self, t: &[f64], x: &DenseMatrix) -> Result<DenseMatrix> {
            DenseMatrix::new(
                x.rows(),
                1,
                (0..x.rows()).map(|i| 2.0 * t[0] * x[(i, 0)]).collect(),
            )
        }
    }

    struct Constant;

    impl ParamFunction for Constant {
        fn n_params(&self) -> usize {
            2
        }
        fn outputs(&self, _: &[f64], x: &DenseMatrix) -> Result<Vec<f64>> {
            Ok(vec![1.5; x.rows()])
        }
        fn jacobian(&self, _: &[f64], x: &DenseMatrix) -> Result<DenseMatrix> {
            Ok(DenseMatrix::zeros(x.rows(), 2))
        }
    }

    fn linear(d: usize) -> Model {
        build_model(&ModelConfig {
            input_dim: d,
            hidden_widths: vec![],
            activation: Activation::Identity,
            lora: None,
            seed: 0,
        })
        .unwrap()
        .0
    }

    fn scalar_pairs() -> Vec<(Vec<f64>, Vec<f64>)> {
        vec![
            (vec![0.0], vec![1.0]),
            (vec![-2.0], vec![0.5]),
            (vec![3.0], vec![3.0]),
        ]
    }

    fn cfg(r_max: f64, n_radii: usize, n_models: usize) -> ShellConfig {
        ShellConfig {
            n_radii,
            n_models,
            ..ShellConfig::new(r_max, 11)
        }
    }

    #[test]
    fn constant_model_has_zero_profile() {
        let pairs = vec![(vec![0.0, 1.0], vec![1.0, 1.0])];
        let x = DenseMatrix::identity(2);
        let p = estimate_lipschitz_profile(&Constant, &[0.3, 0.4], &pairs, &x, &cfg(1.0, 4, 5))
            .unwrap();
        assert!(p
            .l_upper
            .iter()
            .chain(&p.l_avg)
            .chain(&p.grad_l_upper)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_linear_at_zero_radius() {
        let m = linear(1);
        let x = DenseMatrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let p = estimate_lipschitz_profile(&m, &[2.0, 0.0], &scalar_pairs(), &x, &cfg(0.0, 1, 7))
            .unwrap();
        assert_eq!(p.radii, vec![0.0]);
        assert!((p.l_avg[0] - 2.0).abs() < 1e-12 && (p.l_upper[0] - 2.0).abs() < 1e-12);
        assert_eq!(p.skipped_pairs, 1);
        assert_eq!(p.n_pairs, 2);
    }

    #[test]
    fn scalar_linear_upper_matches_sampled_weights() {
        let m = linear(1);
        let c = cfg(1.0, 5, 20);
        let x = DenseMatrix::new(1, 1, vec![1.0]).unwrap();
        let p = estimate_lipschitz_profile(&m, &[2.0, 0.0], &scalar_pairs(), &x, &c).unwrap();
        let mut best: f64 = 0.0;
        for (i, &r) in c.radii().iter().enumerate() {
            for j in 0..c.n_models {
                best = best.max(shell_point(&[2.0, 0.0], r, &c, i, j)[0].abs());
            }
        }
        assert!((p.l_upper[4] - best).abs() < 1e-12);
        assert!(best <= 3.0);
    }

    #[test]
    fn profile_invariants_on_tanh_mlp() {
        let (m, theta0) = build_model(&ModelConfig {
            input_dim: 3,
            hidden_widths: vec![6],
            activation: Activation::Tanh,
            lora: None,
            seed: 4,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..20)
            .map(|_| {
                let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                (a, b)
            })
            .collect();
        let x = DenseMatrix::new(4, 3, (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        let c = cfg(0.5, 4, 8);
        let p = estimate_lipschitz_profile(&m, theta0.values(), &pairs, &x, &c).unwrap();
        for i in 0..4 {
            assert!(p.l_upper[i] >= p.l_avg[i] && p.l_avg[i] >= 0.0);
            if i > 0 {
                assert!(p.l_upper[i] >= p.l_upper[i - 1]);
                assert!(p.grad_l_upper[i] >= p.grad_l_upper[i - 1]);
            }
        }
        let witness = pairs
            .iter()
            .map(|(a, b)| {
                let fa = m.forward_one(&theta0, a).unwrap();
                let fb = m.forward_one(&theta0, b).unwrap();
                (fb - fa).abs() / distance(a, b)
            })
            .fold(0.0, f64::max);
        assert!(witness <= p.l_upper[0] * (1.0 + 1e-12));
        let again = estimate_lipschitz_profile(&m, theta0.values(), &pairs, &x, &c).unwrap();
        assert_eq!(p, again);
        let reset = estimate_lipschitz_profile(
            &m,
            theta0.values(),
            &pairs,
            &x,
            &ShellConfig {
                cumulative: false,
                ..c
            },
        )
        .unwrap();
        assert!(reset.l_upper.iter().zip(&p.l_upper).all(|(r, c)| r <= c));
    }

    #[test]
    fn linear_model_has_zero_gradient_lipschitz() {
        let m = linear(3);
        let x = DenseMatrix::identity(3);
        let g = estimate_grad_lipschitz(&m, &[0.1, 0.2, 0.3, 0.0], &x, &cfg(2.0, 3, 6)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_gradient_ratio_is_two() {
        let x = DenseMatrix::new(1, 1, vec![1.0]).unwrap();
        let g = estimate_grad_lipschitz(&Quadratic, &[1.0], &x, &cfg(0.5, 3, 4)).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 2.0).abs() < 1e-12 && (g[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_ratio_matches_finite_differences() {
        let (m, theta0) = build_model(&ModelConfig {
            input_dim: 2,
            hidden_widths: vec![4],
            activation: Activation::Tanh,
            lora: None,
            seed: 2,
        })
        .unwrap();
        let x = DenseMatrix::new(3, 2, vec![0.5, -0.2, 0.1, 0.9, -0.7, 0.3]).unwrap();
        let c = cfg(0.3, 2, 1);
        let t0 = theta0.values();
        let t = shell_point(t0, 0.3, &c, 1, 0);
        let fd_jac = |theta: &[f64]| {
            let h = 1e-6;
            let p = theta.len();
            let mut data = vec![0.0; x.rows() * p];
            for k in 0..p {
                let mut up = theta.to_vec();
                let mut dn = theta.to_vec();
                up[k] += h;
                dn[k] -= h;
                let fu = m.outputs(&up, &x).unwrap();
                let fdn = m.outputs(&dn, &x).unwrap();
                for i in 0..x.rows() {
                    data[i * p + k] = (fu[i] - fdn[i]) / (2.0 * h);
                }
            }
            DenseMatrix::new(x.rows(), p, data).unwrap()
        };
        let oracle = linalg::operator_norm(&fd_jac(&t).sub(&fd_jac(t0)).unwrap()).unwrap() / 0.3;
        let got = estimate_grad_lipschitz(&m, t0, &x, &c).unwrap()[1];
        assert!(
            (got - oracle).abs() <= 1e-6 * oracle.max(1.0),
            "{got} vs {oracle}"
        );
    }

    #[test]
    fn param_profile_of_linear_model_is_constant() {
        let m = linear(2);
        let x = DenseMatrix::new(3, 2, vec![1.0, 0.0, 0.5, 2.0, -1.0, 1.0]).unwrap();
        let design =
            DenseMatrix::new(3, 3, vec![1.0, 0.0, 1.0, 0.5, 2.0, 1.0, -1.0, 1.0, 1.0]).unwrap();
        let exact = linalg::operator_norm(&design).unwrap();
        let p = estimate_param_lipschitz(&m, &[0.3, -0.2, 0.1], &x, &cfg(1.0, 4, 5)).unwrap();
        for c in &p.per_radius {
            assert!((c.lip_f - exact).abs() < 1e-10);
            assert_eq!(c.lip_grad, 0.0);
            assert!(c.lip_k.abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_constant_respects_product_bound() {
        let (m, theta0) = build_model(&ModelConfig {
            input_dim: 3,
            hidden_widths: vec![5, 4],
            activation: Activation::Tanh,
            lora: None,
            seed: 3,
        })
        .unwrap();
        let x = DenseMatrix::new(4, 3, (0..12).map(|i| (i as f64 * 0.37).cos()).collect()).unwrap();
        let p = estimate_param_lipschitz(&m, theta0.values(), &x, &cfg(1.0, 5, 10)).unwrap();
        let o = p.overall();
        assert!(o.lip_k > 0.0);
        assert!(o.lip_k <= 2.0 * o.lip_f * o.lip_grad * (1.0 + 1e-12));
    }

    #[test]
    fn trajectory_constants_include_start() {
        let m = linear(1);
        let x = DenseMatrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let c = trajectory_lipschitz(&m, &[1.0, 0.0], &[vec![1.5, 0.1]], &x).unwrap();
        let exact =
            linalg::operator_norm(&DenseMatrix::new(2, 2, vec![1.0, 1.0, 2.0, 1.0]).unwrap())
                .unwrap();
        assert!((c.lip_f - exact).abs() < 1e-12);
        assert_eq!(c.lip_grad, 0.0);
    }

    #[test]
    fn radii_grid() {
        assert_eq!(cfg(1.0, 5, 1).radii(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(cfg(0.7, 1, 1).radii(), vec![0.7]);
        assert!(cfg(-1.0, 2, 1).validate().is_err());
        assert!(cfg(1.0, 0, 1).validate().is_err());
    }

    #[test]
    fn sampled_pairs_are_distinct_indices() {
        let x = DenseMatrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let data = Dataset::new(x, vec![0.0; 3], "d", 0).unwrap();
        let pairs = sample_pairs(&data, 50, 3).unwrap();
        assert!(pairs.iter().all(|(a, b)| a != b));
        assert_eq!(pairs, sample_pairs(&data, 50, 3).unwrap());
    }
}
