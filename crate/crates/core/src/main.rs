use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lazy_ntk::harness::{self, DatasetKind, ExperimentConfig, ExperimentKind, Format};
use lazy_ntk::{Error, Result};

#[derive(Parser)]
#[command(name = "lazy-ntk", version, about = "Regularized fine-tuning dynamics and NTK layer selection")]
struct Cli {
    /// TOML experiment configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    /// Dataset CSV (`x1,...,xd,y`) used instead of generated data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Ridge added to kernels before solving.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as CSV.
    GenData {
        #[arg(long, value_enum, default_value = "teacher-regression")]
        kind: DatasetKind,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// File name inside the output directory.
        #[arg(long, default_value = "data.csv")]
        file: String,
    },
    /// Run selective regularized training and write the per-step trace.
    Train(Overrides),
    /// Empirical NTK spectra and kernel-regression risk per layer subset.
    Ntk(Overrides),
    /// Score candidate layer subsets by their spectral risk bound.
    SelectLayers(Overrides),
    /// Sampled Lipschitz profile around the initial parameters.
    Lipschitz(Overrides),
    /// Compare training trajectories against the deviation and gap bounds.
    VerifyBounds(Overrides),
    /// Train across a grid of regularization strengths.
    SweepLambda(Overrides),
    /// Condition-number spread of sketched kernels across seeds.
    SketchRobustness(Overrides),
    /// Run the experiment named in the configuration file.
    Run(Overrides),
}

fn apply(cfg: &mut ExperimentConfig, o: &Overrides) {
    if let Some(p) = &o.data {
        cfg.dataset.path = Some(p.clone());
    }
    if let Some(v) = o.lambda {
        cfg.train.lambda = v;
    }
    if let Some(v) = o.step_size {
        cfg.train.step_size = v;
    }
    if let Some(v) = o.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = o.sigma {
        cfg.sigma = v;
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    if let Some(f) = cli.format {
        cfg.output.format = f;
    }

    let (kind, overrides) = match &cli.command {
        Command::GenData { kind, n, d, noise, file } => {
            let data = harness::gen_dataset(*kind, *n, *d, *noise, cfg.seed)?;
            let dir = &cfg.output.dir;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(file);
            harness::write_csv(&data, &path)?;
            println!("{}", path.display());
            return Ok(());
        }
        Command::Train(o) => (ExperimentKind::Train, o),
        Command::Ntk(o) => (ExperimentKind::NtkReport, o),
        Command::SelectLayers(o) => (ExperimentKind::SelectLayers, o),
        Command::Lipschitz(o) => (ExperimentKind::Lipschitz, o),
        Command::VerifyBounds(o) => (ExperimentKind::VerifyBounds, o),
        Command::SweepLambda(o) => (ExperimentKind::SweepLambda, o),
        Command::SketchRobustness(o) => (ExperimentKind::SketchRobustness, o),
        Command::Run(o) => (cfg.experiment, o),
    };
    cfg.experiment = kind;
    apply(&mut cfg, overrides);
    cfg.validate()?;
    let report = harness::run_experiment(&cfg)?;
    for path in report.emit(&cfg.output.dir, cfg.output.format)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
