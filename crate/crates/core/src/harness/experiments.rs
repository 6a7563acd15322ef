use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind};
use super::datasets::{gen_dataset, load_csv};
use super::derive_seed;
use super::report::{Cell, Provenance, Report, Table};
use crate::data::Dataset;
use crate::dynamics::{self, monotonicity_check, train, BoundReport, TrainTrace, TRACE_COLUMNS};
use crate::error::{Error, Result};
use crate::lipschitz::{
    capture_rmax, estimate_lipschitz_profile, estimate_param_lipschitz, sample_pairs,
    trajectory_lipschitz, ShellConfig,
};
use crate::model::{build_model, Model, ModelConfig, ParamVector, SegmentId};
use crate::ntk::{self, empirical_ntk, fit_kernel_regression, sketch_ntk, training_risk, KernelMatrix};
use crate::spectral::SpectralReport;

const NOTE_RISK: &str = "risk is the unnormalized sum of squared residuals";
const NOTE_ACCURACY: &str = "eval_risk on the held-out split stands in for accuracy";

struct Setup {
    data: Dataset,
    model: Model,
    theta0: ParamVector,
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let data = match &cfg.dataset.path {
            Some(path) => load_csv(path)?,
            None => gen_dataset(cfg.dataset.kind, cfg.dataset.n, cfg.dataset.d, cfg.dataset.noise, cfg.seed)?,
        };
        let (model, theta0) = build_model(&ModelConfig {
            input_dim: data.d(),
            hidden_widths: cfg.model.hidden_widths.clone(),
            activation: cfg.model.activation,
            lora: cfg.model.lora.clone(),
            seed: derive_seed(cfg.seed, "model"),
        })?;
        Ok(Self { data, model, theta0 })
    }

    fn split(&self, cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
        self.data.split(cfg.dataset.train_fraction)
    }

    fn train_seed(cfg: &ExperimentConfig) -> u64 {
        derive_seed(cfg.seed, "train")
    }
}

fn provenance(cfg: &ExperimentConfig, sigma: Option<f64>, estimated: &[&str], notes: &[&str]) -> Provenance {
    Provenance {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: cfg.experiment.name().into(),
        seed: cfg.seed,
        sigma,
        config_hash: cfg.hash(),
        estimated: estimated.iter().map(|s| s.to_string()).collect(),
        notes: notes.iter().map(|s| s.to_string()).collect(),
    }
}

/// Runs the configured experiment and returns its report; nothing is written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let run = match cfg.experiment {
        ExperimentKind::Train => run_train(cfg),
        ExperimentKind::SweepLambda => run_sweep_lambda(cfg),
        ExperimentKind::VerifyBounds => run_verify_bounds(cfg),
        ExperimentKind::NtkReport => run_ntk_report(cfg),
        ExperimentKind::SelectLayers => run_select_layers(cfg),
        ExperimentKind::Lipschitz => run_lipschitz(cfg),
        ExperimentKind::SketchRobustness => run_sketch_robustness(cfg),
    };
    run.map_err(|e| e.context(format!("{} experiment", cfg.experiment.name())))
}

fn eval_risk(model: &Model, theta: &ParamVector, data: &Dataset) -> Result<f64> {
    let f = model.forward(theta, &data.x)?;
    Ok(f.iter().zip(&data.y).map(|(a, b)| (a - b) * (a - b)).sum())
}

fn trace_table(trace: &TrainTrace) -> Table {
    let mut t = Table::new("trace", &TRACE_COLUMNS);
    for r in &trace.records {
        let mut row: Vec<Cell> = r.values().iter().map(|&v| Cell::Num(v)).collect();
        row[0] = Cell::from(r.step);
        t.push(row);
    }
    t
}

fn run_train(cfg: &ExperimentConfig) -> Result<Report> {
    let s = Setup::new(cfg)?;
    let tc = cfg.train.config(cfg.train.lambda, Setup::train_seed(cfg));
    let trace = train(&s.model, &s.theta0, &tc, &s.data)?;
    let mono = monotonicity_check(&trace);
    let mut rep = Report::new(provenance(cfg, None, &[], &[NOTE_RISK]));
    rep.tables.push(trace_table(&trace));
    let last = trace.last();
    rep.set_f64("final_risk", last.risk);
    rep.set_f64("final_deviation", last.deviation);
    rep.set_f64("final_lin_gap", last.lin_gap);
    rep.set("monotone", mono.passed);
    rep.set("monotonicity_violations", mono.violations);
    rep.set("diverged_at", trace.diverged_at);
    Ok(rep)
}

fn run_sweep_lambda(cfg: &ExperimentConfig) -> Result<Report> {
    let s = Setup::new(cfg)?;
    let (train_set, eval_set) = s.split(cfg)?;
    let seed = Setup::train_seed(cfg);
    let rows = cfg
        .train
        .lambda_grid
        .par_iter()
        .map(|&lambda| {
            let trace = train(&s.model, &s.theta0, &cfg.train.config(lambda, seed), &train_set)
                .map_err(|e| e.context(format!("lambda = {lambda}")))?;
            let last = trace.last().clone();
            let eval = eval_risk(&s.model, trace.final_theta(), &eval_set)?;
            Ok((lambda, last, eval, trace.diverged_at))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut t = Table::new(
        "sweep",
        &["lambda", "deviation", "lin_gap", "kl", "train_risk", "eval_risk", "diverged"],
    );
    for (lambda, last, eval, diverged) in &rows {
        t.push(vec![
            (*lambda).into(),
            last.deviation.into(),
            last.lin_gap.into(),
            last.kl.into(),
            last.risk.into(),
            (*eval).into(),
            diverged.is_some().into(),
        ]);
    }
    let lambdas: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let devs: Vec<f64> = rows.iter().map(|r| r.1.deviation).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.1.lin_gap).collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| lambdas[a].total_cmp(&lambdas[b]));
    let decreasing = order.windows(2).all(|w| devs[w[1]] <= devs[w[0]] + 1e-9);

    let mut rep = Report::new(provenance(cfg, None, &[], &[NOTE_RISK, NOTE_ACCURACY]));
    rep.tables.push(t);
    rep.set("deviation_decreasing", decreasing);
    rep.set_f64("spearman_lin_gap_lambda", spearman(&gaps, &lambdas));
    rep.set_f64("spearman_deviation_lambda", spearman(&devs, &lambdas));
    Ok(rep)
}

fn run_verify_bounds(cfg: &ExperimentConfig) -> Result<Report> {
    let s = Setup::new(cfg)?;
    let lambda = cfg.train.lambda;
    let tc = cfg.train.config(lambda, Setup::train_seed(cfg));
    let trace = train(&s.model, &s.theta0, &tc, &s.data)?;
    let r_max = capture_rmax(&trace)?;

    let shell = ShellConfig {
        r_max,
        n_radii: cfg.lipschitz.n_radii,
        n_models: cfg.lipschitz.n_models,
        seed: derive_seed(cfg.seed, "shells"),
        cumulative: cfg.lipschitz.cumulative,
    };
    let theta0 = s.theta0.values();
    let sampled = estimate_param_lipschitz(&s.model, theta0, &s.data.x, &shell)?.overall();
    let path: Vec<Vec<f64>> = trace.thetas.iter().map(|t| t.values().to_vec()).collect();
    let lip = sampled.max(trajectory_lipschitz(&s.model, theta0, &path, &s.data.x)?);

    let res = trace.initial_residual_norm;
    let times = trace.times();
    let radius = r_max.max(f64::MIN_POSITIVE);
    let bounds = BoundReport::evaluate(lip.lip_f, lip.lip_grad, lip.lip_k, res, lambda, radius, &times)?;
    let lambda_steps: Vec<f64> = trace.records.iter().map(|r| r.lambda_t).collect();
    let theta_bound =
        dynamics::theta_deviation_bound_switching(lip.lip_f, res, &lambda_steps, tc.step_size)?;

    let mut steps = Table::new(
        "steps",
        &[
            "step",
            "t",
            "deviation",
            "theta_bound",
            "theta_bound_constant",
            "lin_gap",
            "gap_bound",
            "gap_checked",
            "theta_ok",
            "gap_ok",
        ],
    );
    let (mut theta_bad, mut gap_bad, mut gap_checked, mut const_bad) = (0usize, 0usize, 0usize, 0usize);
    for (k, r) in trace.records.iter().enumerate() {
        let theta_ok = r.deviation <= theta_bound[k];
        let in_range = lambda > 0.0 && (lambda >= bounds.lambda_circ || r.t <= bounds.horizon);
        let gap_ok = !in_range || r.lin_gap <= bounds.gap_bound_curve[k];
        theta_bad += usize::from(!theta_ok);
        gap_bad += usize::from(!gap_ok);
        gap_checked += usize::from(in_range);
        const_bad += usize::from(r.deviation > bounds.theta_bound_curve[k]);
        steps.push(vec![
            r.step.into(),
            r.t.into(),
            r.deviation.into(),
            theta_bound[k].into(),
            bounds.theta_bound_curve[k].into(),
            r.lin_gap.into(),
            bounds.gap_bound_curve[k].into(),
            in_range.into(),
            theta_ok.into(),
            gap_ok.into(),
        ]);
    }
    let mono = monotonicity_check(&trace);
    let lemma = bounds.kernel_lipschitz_consistent();
    let n = trace.records.len();
    let mut checks = Table::new("checks", &["check", "checked", "violations", "passed"]);
    checks.push(vec!["monotone-risk".into(), (n - 1).into(), mono.violations.into(), mono.passed.into()]);
    checks.push(vec!["deviation-bound".into(), n.into(), theta_bad.into(), (theta_bad == 0).into()]);
    checks.push(vec![
        "linearization-gap-bound".into(),
        gap_checked.into(),
        gap_bad.into(),
        (gap_bad == 0).into(),
    ]);
    checks.push(vec!["kernel-lipschitz-product".into(), 1usize.into(), usize::from(!lemma).into(), lemma.into()]);

    let mut rep = Report::new(provenance(
        cfg,
        None,
        &["lip_f", "lip_grad_f", "lip_k", "b", "lambda_circ", "horizon"],
        &[
            NOTE_RISK,
            "Lipschitz constants are the max of shell samples around theta0 and the training iterates",
            "theta_bound uses the realized shrinkage schedule; theta_bound_constant assumes shrinkage at every step",
        ],
    ));
    rep.tables.push(steps);
    rep.tables.push(checks);
    rep.set_f64("lambda", lambda);
    rep.set_f64("r_max", r_max);
    rep.set_f64("init_residual", res);
    rep.set_f64("lip_f", lip.lip_f);
    rep.set_f64("lip_grad_f", lip.lip_grad);
    rep.set_f64("lip_k", lip.lip_k);
    rep.set_f64("b", bounds.b);
    rep.set_f64("lambda_circ", bounds.lambda_circ);
    rep.set_f64("horizon", bounds.horizon);
    rep.set_f64("gap_constant_multiplier", bounds.gap_constant_multiplier);
    rep.set("constant_shrinkage_bound_violations", const_bad);
    rep.set("monotone", mono.passed);
    rep.set("deviation_bound_passed", theta_bad == 0);
    rep.set("gap_bound_passed", gap_bad == 0);
    rep.set("gap_steps_checked", gap_checked);
    rep.set("kernel_lipschitz_consistent", lemma);
    Ok(rep)
}

fn subset_label(layers: &[usize]) -> String {
    layers.iter().map(usize::to_string).collect::<Vec<_>>().join("+")
}

fn layer_segments(model: &Model, layers: &[usize]) -> Vec<SegmentId> {
    layers.iter().flat_map(|&l| model.layer_map().layer_segments(l)).collect()
}

fn segment_params(model: &Model, segs: &[SegmentId]) -> usize {
    segs.iter()
        .filter_map(|id| model.layer_map().get(*id))
        .map(|s| s.len)
        .sum()
}

/// Kernel-regression risks of a kernel: training risk in closed form and
/// held-out risk of the fitted predictor.
fn kernel_risks(
    s: &Setup,
    k: &KernelMatrix,
    train_set: &Dataset,
    eval_set: &Dataset,
    sigma: f64,
) -> Result<(f64, f64)> {
    let train_risk = training_risk(k, &train_set.y, sigma)?;
    let reg = fit_kernel_regression(k, &train_set.y, sigma)?;
    let pred = ntk::predict(&reg, &s.model, &s.theta0, &train_set.x, &eval_set.x)?;
    let eval: f64 = pred.iter().zip(&eval_set.y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((train_risk, eval))
}

fn run_ntk_report(cfg: &ExperimentConfig) -> Result<Report> {
    let s = Setup::new(cfg)?;
    let (train_set, eval_set) = s.split(cfg)?;
    let layers = s.model.layer_map().layers();
    if layers.len() > crate::spectral::MAX_UNCAPPED_CANDIDATES {
        return Err(Error::Config(format!("{} layers is too many to enumerate", layers.len())));
    }
    let subsets: Vec<Vec<usize>> = (1u64..(1 << layers.len()))
        .map(|m| layers.iter().enumerate().filter(|(i, _)| m >> i & 1 == 1).map(|(_, &l)| l).collect())
        .collect();
    let sigma = cfg.sigma;
    let rows = subsets
        .par_iter()
        .map(|sub| {
            let segs = layer_segments(&s.model, sub);
            let k = empirical_ntk(&s.model, &s.theta0, &train_set.x, &segs)?;
            let (tr, ev) = kernel_risks(&s, &k, &train_set, &eval_set, sigma)?;
            Ok(vec![
                subset_label(sub).into(),
                segment_params(&s.model, &segs).into(),
                k.lambda_min().into(),
                k.lambda_max().into(),
                k.cond_number(sigma)?.into(),
                tr.into(),
                ev.into(),
                k.provenance.zero_kernel.into(),
            ])
        })
        .collect::<Result<Vec<Vec<Cell>>>>()?;
    let mut t = Table::new(
        "kernels",
        &["layers", "n_params", "lambda_min", "lambda_max", "kappa", "train_risk", "eval_risk", "zero_kernel"],
    );
    rows.into_iter().for_each(|r| t.push(r));
    let mut rep = Report::new(provenance(cfg, Some(sigma), &[], &[NOTE_RISK]));
    rep.tables.push(t);
    rep.set("n_train", train_set.n());
    rep.set("n_eval", eval_set.n());
    Ok(rep)
}

fn run_select_layers(cfg: &ExperimentConfig) -> Result<Report> {
    let s = Setup::new(cfg)?;
    let (train_set, eval_set) = s.split(cfg)?;
    let layers = s.model.layer_map().layers();
    let base: Vec<usize> = match &cfg.selection.base_layers {
        Some(b) => b.clone(),
        None => layers.last().into_iter().copied().collect(),
    };
    if let Some(bad) = base.iter().find(|l| !layers.contains(l)) {
        return Err(Error::Config(format!("base layer {bad} has no trainable parameters")));
    }
    let candidates: Vec<usize> = layers.iter().copied().filter(|l| !base.contains(l)).collect();
    if candidates.is_empty() {
        return Err(Error::Config("no candidate layers outside the base set".into()));
    }
    let sigma = cfg.sigma;
    let base_segs = layer_segments(&s.model, &base);
    let k_base = empirical_ntk(&s.model, &s.theta0, &train_set.x, &base_segs)?;
    let cand_kernels = candidates
        .iter()
        .map(|&l| empirical_ntk(&s.model, &s.theta0, &train_set.x, &layer_segments(&s.model, &[l])))
        .collect::<Result<Vec<_>>>()?;
    let spectral = SpectralReport::build(&k_base, &cand_kernels, sigma, None, cfg.selection.max_subset_size)?;

    let seed = Setup::train_seed(cfg);
    let scored = spectral
        .selection
        .table
        .par_iter()
        .map(|row| {
            let chosen: Vec<usize> = row.members.iter().map(|&i| candidates[i]).collect();
            let mut all = base.clone();
            all.extend(&chosen);
            let segs = layer_segments(&s.model, &all);
            let mut k = k_base.clone();
            for &i in &row.members {
                k = k.add(&cand_kernels[i])?;
            }
            let kernel_risk = training_risk(&k, &train_set.y, sigma)?;
            let tc = crate::dynamics::TrainConfig {
                trainable: Some(segs),
                ..cfg.train.config(cfg.train.lambda, seed)
            };
            let trace = train(&s.model, &s.theta0, &tc, &train_set)?;
            let eval = eval_risk(&s.model, trace.final_theta(), &eval_set)?;
            Ok(vec![
                subset_label(&chosen).into(),
                row.bitmask.into(),
                row.r_c.into(),
                row.eta.into(),
                row.inactive.into(),
                (row.members == spectral.selection.chosen).into(),
                kernel_risk.into(),
                trace.last().risk.into(),
                eval.into(),
            ])
        })
        .collect::<Result<Vec<Vec<Cell>>>>()?;
    let mut table = Table::new(
        "subsets",
        &[
            "added_layers",
            "bitmask",
            "r_c",
            "eta",
            "inactive",
            "chosen",
            "kernel_train_risk",
            "trained_train_risk",
            "trained_eval_risk",
        ],
    );
    scored.into_iter().for_each(|r| table.push(r));

    let mut cands = Table::new("candidates", &["layer", "eta", "a", "ratio_lower", "ratio_upper", "inactive"]);
    for c in &spectral.candidates {
        let (lo, hi) = c.ratio_interval.unwrap_or((f64::NAN, f64::NAN));
        cands.push(vec![
            candidates[c.index].into(),
            c.eta.into(),
            c.a.unwrap_or(f64::NAN).into(),
            lo.into(),
            hi.into(),
            c.inactive.into(),
        ]);
    }
    let chosen_layers: Vec<usize> = spectral.selection.chosen.iter().map(|&i| candidates[i]).collect();
    let mut rep = Report::new(provenance(
        cfg,
        Some(sigma),
        &[],
        &[NOTE_RISK, "c defaults to the condition number of the base kernel"],
    ));
    rep.tables.push(table);
    rep.tables.push(cands);
    rep.set("base_layers", &base);
    rep.set("chosen_layers", &chosen_layers);
    rep.set_f64("chosen_r_c", spectral.selection.r_c);
    rep.set_f64("kappa", spectral.kappa);
    rep.set_f64("c", spectral.c);
    rep.set("c_is_default", spectral.c_is_default);
    rep.set_f64("b_pair", spectral.b_pair.unwrap_or(f64::NAN));
    Ok(rep)
}

fn run_lipschitz(cfg: &ExperimentConfig) -> Result<Report> {
    let s = Setup::new(cfg)?;
    let r_max = match cfg.lipschitz.r_max {
        Some(r) => r,
        None => {
            let tc = cfg.train.config(cfg.train.lambda, Setup::train_seed(cfg));
            capture_rmax(&train(&s.model, &s.theta0, &tc, &s.data)?)?
        }
    };
    let shell = ShellConfig {
        r_max,
        n_radii: cfg.lipschitz.n_radii,
        n_models: cfg.lipschitz.n_models,
        seed: derive_seed(cfg.seed, "shells"),
        cumulative: cfg.lipschitz.cumulative,
    };
    let pairs = sample_pairs(&s.data, cfg.lipschitz.n_pairs, derive_seed(cfg.seed, "pairs"))?;
    let theta0 = s.theta0.values();
    let profile = estimate_lipschitz_profile(&s.model, theta0, &pairs, &s.data.x, &shell)?;
    let param = estimate_param_lipschitz(&s.model, theta0, &s.data.x, &shell)?;

    let mut t = Table::new("profile", &crate::lipschitz::LipschitzProfile::CSV_COLUMNS);
    for row in profile.rows() {
        t.push(row.iter().map(|&v| Cell::Num(v)).collect());
    }
    let mut p = Table::new("parameter", &["radius", "lip_f", "lip_grad_f", "lip_k"]);
    for (r, c) in param.radii.iter().zip(&param.per_radius) {
        p.push(vec![(*r).into(), c.lip_f.into(), c.lip_grad.into(), c.lip_k.into()]);
    }
    let mut rep = Report::new(provenance(
        cfg,
        None,
        &["l_avg", "l_upper", "grad_l_upper", "lip_f", "lip_grad_f", "lip_k"],
        &[if shell.cumulative {
            "samples accumulate across radii"
        } else {
            "each radius is summarized on its own samples"
        }],
    ));
    rep.tables.push(t);
    rep.tables.push(p);
    rep.set_f64("r_max", r_max);
    rep.set("n_models", profile.n_models);
    rep.set("n_pairs", profile.n_pairs);
    rep.set("skipped_pairs", profile.skipped_pairs);
    Ok(rep)
}

fn run_sketch_robustness(cfg: &ExperimentConfig) -> Result<Report> {
    let s = Setup::new(cfg)?;
    let segs = s.model.layer_map().ids();
    let sigma = cfg.sigma;
    let rows = (0..cfg.sketch.n_seeds)
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(cfg.seed, &format!("sketch-{k}"));
            let kern = sketch_ntk(&s.model, &s.theta0, &s.data, &segs, cfg.sketch.m, seed)?;
            Ok((seed, kern.lambda_min(), kern.lambda_max(), kern.cond_number(sigma)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new("seeds", &["seed", "lambda_min", "lambda_max", "kappa"]);
    for &(seed, lo, hi, kappa) in &rows {
        t.push(vec![seed.to_string().into(), lo.into(), hi.into(), kappa.into()]);
    }
    let kappas: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let tops: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let mut rep = Report::new(provenance(cfg, Some(sigma), &[], &[]));
    rep.tables.push(t);
    rep.set("n", s.data.n());
    rep.set("m", cfg.sketch.m);
    rep.set_f64("kappa_mean", mean(&kappas));
    rep.set_f64("kappa_std", std_dev(&kappas));
    rep.set_f64("kappa_cv", coefficient_of_variation(&kappas));
    rep.set_f64("lambda_max_cv", coefficient_of_variation(&tops));
    Ok(rep)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// `std/mean` (population standard deviation).
pub fn coefficient_of_variation(v: &[f64]) -> f64 {
    std_dev(v) / mean(v)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; NaN when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}
