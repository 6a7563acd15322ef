//! Selectively regularized gradient descent, the co-evolving linearized
//! trajectory, and closed-form bounds on how far both can drift.
//!
//! One step is split into a plain gradient step on the unnormalized squared
//! risk `R̃(θ) = Σ (f_θ(x_i) − y_i)²`,
//!
//! ```text
//! θ̃ = θ_t − η ∇R̃(θ_t)
//! ```
//!
//! followed by shrinkage toward the pretrained parameters,
//! `θ_{t+1} = θ̃ − λη (θ̃ − θ0)`. With selective regularization the
//! shrinkage is applied to a unit (segment, whole vector or coordinate) only
//! when `∇R̃(θ_t)·(θ_t − θ0) ≥ 0` restricted to that unit.
//!
//! Bound formulas are continuous-time; step `k` maps to `t = k·η`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{norm2, DenseMatrix};
use crate::model::{LayerMap, Model, ParamVector, SegmentId};

/// Training aborts once the risk exceeds this value.
pub const DIVERGENCE_RISK: f64 = 1e12;

/// Multiplier of `Lip(∇f)` inside the gap constant `b`.
pub const GAP_CONSTANT_MULTIPLIER: f64 = 4.0;

/// Unit on which the shrinkage decision is taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    #[default]
    Segment,
    Global,
    Coordinate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub step_size: f64,
    pub steps: usize,
    #[serde(default = "default_true")]
    pub selective: bool,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default)]
    pub seed: u64,
    /// Segments that receive gradient updates; all when absent.
    #[serde(default)]
    pub trainable: Option<Vec<SegmentId>>,
    /// With `selective`, drop a step's shrinkage when it would leave the risk
    /// above the risk before the step. Near a stationary point the
    /// inner-product test passes on rounding noise and a discrete shrink can
    /// raise the risk at second order; the guard keeps the discrete rule
    /// non-increasing there.
    #[serde(default = "default_true")]
    pub risk_guard: bool,
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(lambda: f64, step_size: f64, steps: usize) -> Self {
        Self {
            lambda,
            step_size,
            steps,
            selective: true,
            granularity: Granularity::Segment,
            seed: 0,
            trainable: None,
            risk_guard: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.lambda * self.step_size >= 1.0 {
            return Err(Error::Config(format!(
                "lambda * step_size = {} must be < 1",
                self.lambda * self.step_size
            )));
        }
        Ok(())
    }

    fn mask(&self, map: &LayerMap) -> Result<Option<Vec<bool>>> {
        let Some(ids) = &self.trainable else {
            return Ok(None);
        };
        let mut mask = vec![false; map.dim()];
        for i in map.indices(ids)? {
            mask[i] = true;
        }
        Ok(Some(mask))
    }
}

/// Result of one regularized update.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub theta: ParamVector,
    /// `λ` when shrinkage hit at least one unit, else 0.
    pub lambda_t: f64,
    pub shrunk_units: usize,
    pub total_units: usize,
}

fn units(map: &LayerMap, granularity: Granularity) -> Vec<std::ops::Range<usize>> {
    match granularity {
        Granularity::Segment => map.segments().iter().map(|s| s.range()).collect(),
        Granularity::Global => vec![0..map.dim()],
        Granularity::Coordinate => (0..map.dim()).map(|i| i..i + 1).collect(),
    }
}

/// Per-unit shrink decisions of the selective rule: unit `u` is shrunk iff
/// `∇R̃(θ)_u · (θ − θ0)_u ≥ 0` (always, when not selective).
pub fn shrink_decisions(
    theta: &ParamVector,
    theta0: &ParamVector,
    grad: &[f64],
    cfg: &TrainConfig,
) -> Vec<bool> {
    let t = theta.values();
    let t0 = theta0.values();
    units(theta.layer_map(), cfg.granularity)
        .into_iter()
        .map(|range| !cfg.selective || range.map(|i| grad[i] * (t[i] - t0[i])).sum::<f64>() >= 0.0)
        .collect()
}

/// Gradient step followed by shrinkage toward `θ0` on the units marked in
/// `decisions`.
pub fn apply_update(
    theta: &ParamVector,
    theta0: &ParamVector,
    grad: &[f64],
    decisions: &[bool],
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    let eta = cfg.step_size;
    let t0 = theta0.values();
    let mut next: Vec<f64> = theta.values().iter().zip(grad).map(|(v, g)| v - eta * g).collect();
    let unit_ranges = units(theta.layer_map(), cfg.granularity);
    if decisions.len() != unit_ranges.len() {
        return Err(Error::Shape(format!(
            "{} decisions for {} units",
            decisions.len(),
            unit_ranges.len()
        )));
    }
    let mut shrunk_units = 0;
    for (range, &apply) in unit_ranges.iter().zip(decisions) {
        if apply {
            shrunk_units += 1;
            for i in range.clone() {
                next[i] -= cfg.lambda * eta * (next[i] - t0[i]);
            }
        }
    }
    Ok(StepOutcome {
        theta: theta.with_values(next)?,
        lambda_t: if shrunk_units > 0 { cfg.lambda } else { 0.0 },
        shrunk_units,
        total_units: unit_ranges.len(),
    })
}

/// Applies the two-step rule given a precomputed risk gradient at `theta`.
pub fn regularized_update(
    theta: &ParamVector,
    theta0: &ParamVector,
    grad: &[f64],
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    apply_update(theta, theta0, grad, &shrink_decisions(theta, theta0, grad, cfg), cfg)
}

fn masked(mut grad: Vec<f64>, mask: Option<&[bool]>) -> Vec<f64> {
    if let Some(mask) = mask {
        for (g, &keep) in grad.iter_mut().zip(mask) {
            if !keep {
                *g = 0.0;
            }
        }
    }
    grad
}

/// One selectively regularized step on the full batch. `step` is only used
/// to label a divergence error.
pub fn selective_step(
    model: &Model,
    theta: &ParamVector,
    theta0: &ParamVector,
    cfg: &TrainConfig,
    data: &Dataset,
    step: usize,
) -> Result<StepOutcome> {
    cfg.validate()?;
    let mask = cfg.mask(model.layer_map())?;
    let (_, grad) = model.risk_gradient(theta, &data.x, &data.y)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            step,
            reason: "non-finite gradient".into(),
        });
    }
    let grad = masked(grad, mask.as_deref());
    let decisions = shrink_decisions(theta, theta0, &grad, cfg);
    let outcome = apply_update(theta, theta0, &grad, &decisions, cfg)?;
    if !guard_applies(cfg, &outcome) {
        return Ok(outcome);
    }
    let risk = |t: &ParamVector| -> Result<f64> {
        let f = model.forward(t, &data.x)?;
        Ok(squared_distance(&f, &data.y))
    };
    if risk(&outcome.theta)? <= risk(theta)? {
        Ok(outcome)
    } else {
        apply_update(theta, theta0, &grad, &vec![false; decisions.len()], cfg)
    }
}

fn guard_applies(cfg: &TrainConfig, outcome: &StepOutcome) -> bool {
    cfg.selective && cfg.risk_guard && outcome.shrunk_units > 0
}

/// Metrics recorded after each step; row 0 is the initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Continuous time `step·η`.
    pub t: f64,
    pub risk: f64,
    pub deviation: f64,
    pub lin_gap: f64,
    pub kl: f64,
    pub lin_risk: f64,
    pub lambda_t: f64,
    #[serde(rename = "Lambda_t")]
    pub big_lambda_t: f64,
}

pub const TRACE_COLUMNS: [&str; 9] = [
    "step",
    "t",
    "risk",
    "deviation",
    "lin_gap",
    "kl",
    "lin_risk",
    "lambda_t",
    "Lambda_t",
];

impl StepRecord {
    pub fn values(&self) -> [f64; 9] {
        [
            self.step as f64,
            self.t,
            self.risk,
            self.deviation,
            self.lin_gap,
            self.kl,
            self.lin_risk,
            self.lambda_t,
            self.big_lambda_t,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct TrainTrace {
    pub records: Vec<StepRecord>,
    pub thetas: Vec<ParamVector>,
    pub config: TrainConfig,
    /// `‖f_{θ0}(X) − Y‖₂`.
    pub initial_residual_norm: f64,
    /// Step at which training was aborted, if it was.
    pub diverged_at: Option<usize>,
}

impl TrainTrace {
    pub fn last(&self) -> &StepRecord {
        self.records
            .last()
            .expect("trace always holds the initial state")
    }

    pub fn final_theta(&self) -> &ParamVector {
        self.thetas
            .last()
            .expect("trace always holds the initial state")
    }

    pub fn risks(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.risk).collect()
    }

    pub fn deviations(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.deviation).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }
}

struct Linearization {
    f0: Vec<f64>,
    jac0: DenseMatrix,
}

impl Linearization {
    fn outputs(&self, theta_bar: &ParamVector, theta0: &ParamVector) -> Vec<f64> {
        let delta: Vec<f64> = theta_bar
            .values()
            .iter()
            .zip(theta0.values())
            .map(|(a, b)| a - b)
            .collect();
        let moved = self
            .jac0
            .matvec(&delta)
            .expect("jacobian matches parameters");
        self.f0.iter().zip(moved).map(|(a, b)| a + b).collect()
    }

    fn risk_gradient(&self, outputs: &[f64], y: &[f64]) -> Vec<f64> {
        let residual: Vec<f64> = outputs.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect();
        self.jac0
            .transpose()
            .matvec(&residual)
            .expect("jacobian matches samples")
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Full-batch training that co-evolves the linearized parameters `θ̄` with
/// the Jacobian frozen at `θ0`, applying the shrink decisions taken for `θ`.
///
/// A run whose risk exceeds [`DIVERGENCE_RISK`] or whose gradient stops
/// being finite ends early with `diverged_at` set; the partial trace is kept.
pub fn train(
    model: &Model,
    theta0: &ParamVector,
    cfg: &TrainConfig,
    data: &Dataset,
) -> Result<TrainTrace> {
    cfg.validate()?;
    let mask = cfg.mask(model.layer_map())?;
    let y = &data.y;

    let mut jac0 = model.jacobian_full(theta0, &data.x)?;
    if let Some(mask) = &mask {
        for r in 0..jac0.rows() {
            for (v, &keep) in jac0.row_mut(r).iter_mut().zip(mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }
    let (residual0, grad0) = model.risk_gradient(theta0, &data.x, y)?;
    let f0: Vec<f64> = residual0.iter().zip(y).map(|(r, y)| r + y).collect();
    let lin = Linearization { f0, jac0 };
    let risk0 = norm2(&residual0).powi(2);

    let mut trace = TrainTrace {
        records: vec![StepRecord {
            step: 0,
            t: 0.0,
            risk: risk0,
            deviation: 0.0,
            lin_gap: 0.0,
            kl: 0.0,
            lin_risk: risk0,
            lambda_t: 0.0,
            big_lambda_t: 0.0,
        }],
        thetas: vec![theta0.clone()],
        config: cfg.clone(),
        initial_residual_norm: risk0.sqrt(),
        diverged_at: None,
    };

    let mut theta = theta0.clone();
    let mut grad = masked(grad0, mask.as_deref());
    let mut theta_bar = theta0.clone();
    let mut f_bar = lin.f0.clone();
    let mut big_lambda = 0.0;
    let mut prev_risk = risk0;

    for step in 1..=cfg.steps {
        if grad.iter().any(|g| !g.is_finite()) {
            trace.diverged_at = Some(step);
            break;
        }
        let mut decisions = shrink_decisions(&theta, theta0, &grad, cfg);
        let mut outcome = apply_update(&theta, theta0, &grad, &decisions, cfg)?;
        let (mut residual, mut g) = model.risk_gradient(&outcome.theta, &data.x, y)?;
        if guard_applies(cfg, &outcome) && norm2(&residual).powi(2) > prev_risk {
            decisions.iter_mut().for_each(|d| *d = false);
            outcome = apply_update(&theta, theta0, &grad, &decisions, cfg)?;
            (residual, g) = model.risk_gradient(&outcome.theta, &data.x, y)?;
        }

        // the linearized run takes the same shrink decisions, so the gap
        // measures linearization error rather than diverging decisions
        let grad_bar = masked(lin.risk_gradient(&f_bar, y), mask.as_deref());
        let outcome_bar = apply_update(&theta_bar, theta0, &grad_bar, &decisions, cfg)?;
        f_bar = lin.outputs(&outcome_bar.theta, theta0);

        theta = outcome.theta;
        theta_bar = outcome_bar.theta;
        grad = masked(g, mask.as_deref());
        let f: Vec<f64> = residual.iter().zip(y).map(|(r, y)| r + y).collect();
        let risk = norm2(&residual).powi(2);
        big_lambda += outcome.lambda_t * cfg.step_size;

        trace.records.push(StepRecord {
            step,
            t: step as f64 * cfg.step_size,
            risk,
            deviation: theta.distance(theta0),
            lin_gap: squared_distance(&f, &f_bar).sqrt(),
            kl: kl_metric(&f, &f_bar)?,
            lin_risk: squared_distance(&f_bar, y),
            lambda_t: outcome.lambda_t,
            big_lambda_t: big_lambda,
        });
        trace.thetas.push(theta.clone());
        prev_risk = risk;
        if !(risk <= DIVERGENCE_RISK) {
            trace.diverged_at = Some(step);
            break;
        }
    }
    Ok(trace)
}

fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// Mean over samples of `KL(softmax([f_i, 0]) ‖ softmax([f̄_i, 0]))`.
pub fn kl_metric(f: &[f64], f_bar: &[f64]) -> Result<f64> {
    if f.len() != f_bar.len() {
        return Err(Error::Shape(format!(
            "{} outputs vs {} linearized outputs",
            f.len(),
            f_bar.len()
        )));
    }
    if f.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = f
        .iter()
        .zip(f_bar)
        .map(|(&a, &b)| {
            if a == b {
                return 0.0;
            }
            let p = 1.0 / (1.0 + (-a).exp());
            let (log_p, log_q) = (-softplus(-a), -softplus(-b));
            let (log_1p, log_1q) = (-softplus(a), -softplus(b));
            (p * (log_p - log_q) + (1.0 - p) * (log_1p - log_1q)).max(0.0)
        })
        .sum();
    Ok(total / f.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub passed: bool,
    /// First step whose risk exceeds its predecessor's by more than the slack.
    pub first_violation: Option<usize>,
    pub violations: usize,
}

/// Checks `risk[t+1] ≤ risk[t] + 1e-8·(1 + risk[t])` along the trace.
pub fn monotonicity_check(trace: &TrainTrace) -> MonotonicityReport {
    let mut first = None;
    let mut violations = 0;
    for w in trace.records.windows(2) {
        let slack = 1e-8 * (1.0 + w[0].risk);
        if w[1].risk > w[0].risk + slack {
            violations += 1;
            first.get_or_insert(w[1].step);
        }
    }
    MonotonicityReport {
        passed: violations == 0,
        first_violation: first,
        violations,
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
    }
    Ok(())
}

/// `(1 − e^{−λt})/λ`, with the `λ → 0` limit `t`.
fn saturating_time(lambda: f64, t: f64) -> f64 {
    if lambda == 0.0 {
        t
    } else {
        -(-lambda * t).exp_m1() / lambda
    }
}

/// Bound on `‖θ_t − θ0‖` under a constant shrinkage rate:
/// `2·Lip(f)·‖f_{θ0}(X) − Y‖·(1 − e^{−λt})/λ`, or `2·Lip(f)·‖f_{θ0}(X) − Y‖·t` at `λ = 0`.
pub fn theta_deviation_bound(lip_f: f64, init_residual: f64, lambda: f64, t: f64) -> Result<f64> {
    check_nonneg("lip_f", lip_f)?;
    check_nonneg("init_residual", init_residual)?;
    check_nonneg("lambda", lambda)?;
    check_nonneg("t", t)?;
    Ok(2.0 * lip_f * init_residual * saturating_time(lambda, t))
}

/// Deviation bound for a switching shrinkage rate, one value per trace row.
///
/// Uses `2·Lip(f)·‖f_{θ0}(X) − Y‖·∫₀ᵗ e^{−(Λ_t − Λ_s)} ds` with `λ_s`
/// piecewise constant over each step interval.
pub fn theta_deviation_bound_switching(
    lip_f: f64,
    init_residual: f64,
    lambda_steps: &[f64],
    step_size: f64,
) -> Result<Vec<f64>> {
    check_nonneg("lip_f", lip_f)?;
    check_nonneg("init_residual", init_residual)?;
    let mut integral = 0.0;
    let mut out = Vec::with_capacity(lambda_steps.len());
    for (k, &lam) in lambda_steps.iter().enumerate() {
        if k > 0 {
            check_nonneg("lambda_t", lam)?;
            integral = (-lam * step_size).exp() * integral + saturating_time(lam, step_size);
        }
        out.push(2.0 * lip_f * init_residual * integral);
    }
    Ok(out)
}

/// `b = 2·Lip(f)²·‖f_{θ0}(X) − Y‖·((4/λ)·Lip(∇f)·‖f_{θ0}(X) − Y‖ + 1)`.
pub fn gap_constant(lip_f: f64, lip_grad_f: f64, init_residual: f64, lambda: f64) -> Result<f64> {
    check_nonneg("lip_f", lip_f)?;
    check_nonneg("lip_grad_f", lip_grad_f)?;
    check_nonneg("init_residual", init_residual)?;
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!(
            "linearization gap bound needs lambda > 0 (unbounded regime at lambda = {lambda})"
        )));
    }
    Ok(2.0
        * lip_f
        * lip_f
        * init_residual
        * (GAP_CONSTANT_MULTIPLIER / lambda * lip_grad_f * init_residual + 1.0))
}

/// `x − (1 − e^{−x})`, accurate for small `x`.
fn excess_time(x: f64) -> f64 {
    if x < 1e-4 {
        x * x * (0.5 - x / 6.0 + x * x / 24.0)
    } else {
        x + (-x).exp_m1()
    }
}

/// Bound on `‖f_{θ_t}(X) − f̄_{θ̄_t}(X)‖`: `b·(t − (1 − e^{−λt})/λ)`.
pub fn linearization_gap_bound(
    lip_f: f64,
    lip_grad_f: f64,
    init_residual: f64,
    lambda: f64,
    t: f64,
) -> Result<f64> {
    let b = gap_constant(lip_f, lip_grad_f, init_residual, lambda)?;
    check_nonneg("t", t)?;
    Ok(b * excess_time(lambda * t) / lambda)
}

/// Threshold `λ∘ = 2‖f_{θ0}(X) − Y‖·Lip(f)/r` and the time horizon during
/// which the trajectory provably stays in the radius-`r` ball
/// (infinite when `λ ≥ λ∘`).
pub fn lambda_circ_and_horizon(
    lip_f: f64,
    init_residual: f64,
    r: f64,
    lambda: f64,
) -> Result<(f64, f64)> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!(
            "ball radius must be positive, got {r}"
        )));
    }
    check_nonneg("lip_f", lip_f)?;
    check_nonneg("init_residual", init_residual)?;
    check_nonneg("lambda", lambda)?;
    let circ = 2.0 * init_residual * lip_f / r;
    let horizon = if lambda >= circ {
        f64::INFINITY
    } else if lambda == 0.0 {
        1.0 / circ
    } else {
        -(-lambda / circ).ln_1p() / lambda
    };
    Ok((circ, horizon))
}

/// Constants and bound curves for one training run.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub lip_f: f64,
    pub lip_grad_f: f64,
    pub lip_k: f64,
    pub init_residual: f64,
    pub lambda: f64,
    pub radius: f64,
    pub b: f64,
    pub lambda_circ: f64,
    pub horizon: f64,
    pub theta_bound_curve: Vec<f64>,
    pub gap_bound_curve: Vec<f64>,
    /// Lipschitz constants are sampled estimates, not certified values.
    pub estimated: bool,
    pub gap_constant_multiplier: f64,
}

impl BoundReport {
    /// Evaluates every bound at the given continuous times. `b` and the gap
    /// curve are `NaN` at `λ = 0`, where no gap bound exists.
    pub fn evaluate(
        lip_f: f64,
        lip_grad_f: f64,
        lip_k: f64,
        init_residual: f64,
        lambda: f64,
        radius: f64,
        times: &[f64],
    ) -> Result<Self> {
        let (lambda_circ, horizon) = lambda_circ_and_horizon(lip_f, init_residual, radius, lambda)?;
        let theta_bound_curve = times
            .iter()
            .map(|&t| theta_deviation_bound(lip_f, init_residual, lambda, t))
            .collect::<Result<Vec<_>>>()?;
        let (b, gap_bound_curve) = if lambda > 0.0 {
            (
                gap_constant(lip_f, lip_grad_f, init_residual, lambda)?,
                times
                    .iter()
                    .map(|&t| linearization_gap_bound(lip_f, lip_grad_f, init_residual, lambda, t))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            (f64::NAN, vec![f64::NAN; times.len()])
        };
        Ok(Self {
            lip_f,
            lip_grad_f,
            lip_k,
            init_residual,
            lambda,
            radius,
            b,
            lambda_circ,
            horizon,
            theta_bound_curve,
            gap_bound_curve,
            estimated: true,
            gap_constant_multiplier: GAP_CONSTANT_MULTIPLIER,
        })
    }

    /// `Lip(k) ≤ 2·Lip(f)·Lip(∇f)`, with a small relative slack.
    pub fn kernel_lipschitz_consistent(&self) -> bool {
        let cap = 2.0 * self.lip_f * self.lip_grad_f;
        self.lip_k <= cap * (1.0 + 1e-9) + 1e-12
    }
}
