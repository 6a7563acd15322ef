//! Spectral perturbation of the tangent kernel when trainable parameters are
//! added, and the layer-subset ranking built on it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::ntk::KernelMatrix;

/// More candidates than this need a `max_subset_size` cap that keeps the
/// enumeration at or below [`MAX_ENUMERATED_SUBSETS`].
pub const MAX_UNCAPPED_CANDIDATES: usize = 12;
pub const MAX_ENUMERATED_SUBSETS: u64 = 1 << MAX_UNCAPPED_CANDIDATES;

fn same_size(k: &KernelMatrix, s: &KernelMatrix) -> Result<()> {
    if k.n() != s.n() {
        return Err(Error::Shape(format!(
            "kernel is {}x{} but perturbation is {}x{}",
            k.n(),
            k.n(),
            s.n(),
            s.n()
        )));
    }
    Ok(())
}

fn lambda_max_shifted(m: &DenseMatrix, sigma: f64) -> Result<f64> {
    Ok(linalg::sym_eig(m)?.lambda_max() + sigma)
}

/// `η = ‖K^{-1/2} S K^{-1/2}‖`, with `K` jittered if singular.
pub fn eta(k: &KernelMatrix, s: &KernelMatrix) -> Result<f64> {
    same_size(k, s)?;
    if s.is_zero() {
        return Ok(0.0);
    }
    let r = linalg::inv_sqrt(k.matrix())?;
    let m = r.matmul(s.matrix())?.matmul(&r)?.symmetrize()?;
    linalg::spectral_norm(&m)
}

/// `[(1−η)λ_i(K), (1+η)λ_i(K)]` for each eigenvalue of `K`, ascending.
pub fn eigen_intervals(k: &KernelMatrix, s: &KernelMatrix) -> Result<Vec<(f64, f64)>> {
    let e = eta(k, s)?;
    Ok(k.eig()
        .values
        .iter()
        .map(|&l| ((1.0 - e) * l, (1.0 + e) * l))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioInterval {
    pub eta: f64,
    pub kappa: f64,
    pub c: f64,
    pub a: f64,
    pub lower: f64,
    pub upper: f64,
}

fn resolve_c(kappa: f64, c: Option<f64>) -> Result<f64> {
    let c = c.unwrap_or(kappa);
    if kappa > c {
        return Err(Error::Precondition(format!(
            "condition number {kappa} exceeds c = {c}"
        )));
    }
    Ok(c)
}

fn a_constant(eta: f64, c: f64) -> Result<f64> {
    if eta >= 1.0 {
        return Err(Error::VacuousBound { eta });
    }
    Ok(c / ((1.0 - eta) * (1.0 - eta)))
}

/// Interval on `√(R(K+S)/R(K))`. `c` defaults to `κ(K+σI)`.
pub fn risk_ratio_interval(
    k: &KernelMatrix,
    s: &KernelMatrix,
    sigma: f64,
    c: Option<f64>,
) -> Result<RatioInterval> {
    let e = eta(k, s)?;
    let kappa = k.cond_number(sigma)?;
    let a = a_constant(e, resolve_c(kappa, c)?)?;
    let c = c.unwrap_or(kappa);
    let ratio = lambda_max_shifted(&k.matrix().add(s.matrix())?, sigma)? / (k.lambda_max() + sigma);
    Ok(RatioInterval {
        eta: e,
        kappa,
        c,
        a,
        lower: ratio / a,
        upper: a * ratio,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairInterval {
    pub eta1: f64,
    pub eta2: f64,
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Interval on `√(R(K+S₁)/R(K+S₂))` with `b = a₁a₂`.
pub fn compare_candidates(
    k: &KernelMatrix,
    s1: &KernelMatrix,
    s2: &KernelMatrix,
    sigma: f64,
    c: Option<f64>,
) -> Result<PairInterval> {
    same_size(k, s2)?;
    let (eta1, eta2) = (eta(k, s1)?, eta(k, s2)?);
    let c = resolve_c(k.cond_number(sigma)?, c)?;
    let (a1, a2) = (a_constant(eta1, c)?, a_constant(eta2, c)?);
    let b = a1 * a2;
    let top1 = lambda_max_shifted(&k.matrix().add(s1.matrix())?, sigma)?;
    let top2 = lambda_max_shifted(&k.matrix().add(s2.matrix())?, sigma)?;
    Ok(PairInterval {
        eta1,
        eta2,
        a1,
        a2,
        b,
        lower: top1 / (b * top2),
        upper: b * top1 / top2,
    })
}

/// One enumerated candidate subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    /// Zero-based candidate indices, ascending.
    pub members: Vec<usize>,
    pub bitmask: u64,
    /// `λ_max(K+S^C+σI)/λ_max(K+σI)`.
    pub r_c: f64,
    pub eta: f64,
    /// Some member kernel is identically zero.
    pub inactive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSelection {
    pub chosen: Vec<usize>,
    pub r_c: f64,
    pub sigma: f64,
    pub table: Vec<SubsetScore>,
}

fn count_subsets(l: usize, max_size: usize) -> u64 {
    let mut total = 0u64;
    let mut binom = 1u64;
    for k in 1..=max_size.min(l) {
        binom = binom * (l - k + 1) as u64 / k as u64;
        total = total.saturating_add(binom);
    }
    total
}

/// Subsets of `0..l` with `1..=max_size` members as ascending index lists,
/// ordered by bitmask.
fn enumerate_subsets(l: usize, max_size: usize) -> Vec<Vec<usize>> {
    fn extend(
        start: usize,
        l: usize,
        max_size: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        for i in start..l {
            cur.push(i);
            out.push(cur.clone());
            if cur.len() < max_size {
                extend(i + 1, l, max_size, cur, out);
            }
            cur.pop();
        }
    }
    let mut out = Vec::new();
    extend(0, l, max_size, &mut Vec::new(), &mut out);
    out.sort_by_key(|m| m.iter().map(|&i| 1u64 << i).sum::<u64>());
    out
}

/// Ranks every candidate subset by `r_c` and returns the minimizer, ties going
/// to the lexicographically smallest member list.
pub fn select_layers(
    k_base: &KernelMatrix,
    candidates: &[KernelMatrix],
    sigma: f64,
    max_subset_size: usize,
) -> Result<LayerSelection> {
    if candidates.is_empty() {
        return Err(Error::Domain("no candidate kernels".into()));
    }
    if max_subset_size == 0 {
        return Err(Error::Domain("max_subset_size must be at least 1".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    for s in candidates {
        same_size(k_base, s)?;
    }
    let l = candidates.len();
    let n_subsets = count_subsets(l, max_subset_size);
    if l > 63 || (l > MAX_UNCAPPED_CANDIDATES && n_subsets > MAX_ENUMERATED_SUBSETS) {
        return Err(Error::EnumerationLimit {
            candidates: l,
            subsets: n_subsets,
            limit: MAX_ENUMERATED_SUBSETS,
        });
    }
    let base_top = k_base.lambda_max() + sigma;
    let table = enumerate_subsets(l, max_subset_size)
        .into_par_iter()
        .map(|members| {
            let mut s = DenseMatrix::zeros(k_base.n(), k_base.n());
            for &i in &members {
                s = s.add(candidates[i].matrix())?;
            }
            let s = KernelMatrix::from_matrix(s)?;
            let r_c = lambda_max_shifted(&k_base.matrix().add(s.matrix())?, sigma)? / base_top;
            Ok(SubsetScore {
                bitmask: members.iter().map(|&i| 1u64 << i).sum(),
                eta: eta(k_base, &s)?,
                inactive: members.iter().any(|&i| candidates[i].is_zero()),
                members,
                r_c,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = table
        .iter()
        .min_by(|x, y| {
            x.r_c
                .total_cmp(&y.r_c)
                .then_with(|| x.members.cmp(&y.members))
        })
        .expect("at least one subset");
    Ok(LayerSelection {
        chosen: best.members.clone(),
        r_c: best.r_c,
        sigma,
        table,
    })
}

/// Per-candidate perturbation summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateReport {
    pub index: usize,
    pub eta: f64,
    /// `None` when `η ≥ 1` makes the ratio bound vacuous.
    pub a: Option<f64>,
    pub eig_intervals: Vec<(f64, f64)>,
    pub ratio_interval: Option<(f64, f64)>,
    pub inactive: bool,
}

/// Everything the spectral analysis says about a base kernel and its
/// candidate perturbations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    pub sigma: f64,
    pub kappa: f64,
    pub c: f64,
    pub c_is_default: bool,
    pub candidates: Vec<CandidateReport>,
    /// `a₁a₂` for the first two candidates when both bounds are informative.
    pub b_pair: Option<f64>,
    pub selection: LayerSelection,
}

impl SpectralReport {
    pub fn build(
        k_base: &KernelMatrix,
        candidates: &[KernelMatrix],
        sigma: f64,
        c: Option<f64>,
        max_subset_size: usize,
    ) -> Result<Self> {
        let kappa = k_base.cond_number(sigma)?;
        let c_val = resolve_c(kappa, c)?;
        let reports = candidates
            .iter()
            .enumerate()
            .map(|(index, s)| {
                let e = eta(k_base, s)?;
                let a = a_constant(e, c_val).ok();
                let ratio_interval = match a {
                    Some(_) => {
                        let r = risk_ratio_interval(k_base, s, sigma, Some(c_val))?;
                        Some((r.lower, r.upper))
                    }
                    None => None,
                };
                Ok(CandidateReport {
                    index,
                    eta: e,
                    a,
                    eig_intervals: eigen_intervals(k_base, s)?,
                    ratio_interval,
                    inactive: s.is_zero(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let b_pair = match reports.as_slice() {
            [x, y, ..] => x.a.zip(y.a).map(|(a1, a2)| a1 * a2),
            _ => None,
        };
        Ok(Self {
            sigma,
            kappa,
            c: c_val,
            c_is_default: c.is_none(),
            candidates: reports,
            b_pair,
            selection: select_layers(k_base, candidates, sigma, max_subset_size)?,
        })
    }
}
