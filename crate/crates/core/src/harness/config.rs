use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::datasets::DatasetKind;
use super::report::Format;
use crate::dynamics::{Granularity, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Activation, LoraConfig};

/// The lambda values swept by `sweep-lambda` unless overridden.
pub const DEFAULT_LAMBDA_GRID: [f64; 8] = [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    Train,
    SweepLambda,
    VerifyBounds,
    NtkReport,
    SelectLayers,
    Lipschitz,
    SketchRobustness,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::SweepLambda => "sweep-lambda",
            ExperimentKind::VerifyBounds => "verify-bounds",
            ExperimentKind::NtkReport => "ntk-report",
            ExperimentKind::SelectLayers => "select-layers",
            ExperimentKind::Lipschitz => "lipschitz",
            ExperimentKind::SketchRobustness => "sketch-robustness",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub d: usize,
    pub noise: f64,
    /// Load this CSV instead of generating data.
    pub path: Option<PathBuf>,
    /// Leading fraction used for training where a held-out split is needed.
    pub train_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::TeacherRegression,
            n: 64,
            d: 4,
            noise: 0.1,
            path: None,
            train_fraction: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub lora: Option<LoraConfig>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden_widths: vec![16],
            activation: Activation::Tanh,
            lora: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub lambda: f64,
    pub step_size: f64,
    pub steps: usize,
    pub selective: bool,
    pub risk_guard: bool,
    pub granularity: Granularity,
    pub lambda_grid: Vec<f64>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            step_size: 1e-3,
            steps: 1000,
            selective: true,
            risk_guard: true,
            granularity: Granularity::Segment,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
        }
    }
}

impl TrainSpec {
    pub fn config(&self, lambda: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            selective: self.selective,
            risk_guard: self.risk_guard,
            granularity: self.granularity,
            seed,
            ..TrainConfig::new(lambda, self.step_size, self.steps)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzSpec {
    pub n_models: usize,
    pub n_radii: usize,
    pub n_pairs: usize,
    pub cumulative: bool,
    /// Shell radius; taken from a training run's largest deviation when unset.
    pub r_max: Option<f64>,
}

impl Default for LipschitzSpec {
    fn default() -> Self {
        Self {
            n_models: 100,
            n_radii: 10,
            n_pairs: 1000,
            cumulative: true,
            r_max: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchSpec {
    pub m: usize,
    pub n_seeds: usize,
}

impl Default for SketchSpec {
    fn default() -> Self {
        Self { m: 32, n_seeds: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSpec {
    pub max_subset_size: usize,
    /// Layers always trained; defaults to the highest layer with parameters.
    pub base_layers: Option<Vec<usize>>,
}

impl Default for SelectionSpec {
    fn default() -> Self {
        Self {
            max_subset_size: 3,
            base_layers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub format: Format,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: Format::Csv,
        }
    }
}

/// Everything one experiment run depends on. Parsed from TOML; every field
/// has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub sigma: f64,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainSpec,
    pub lipschitz: LipschitzSpec,
    pub sketch: SketchSpec,
    pub selection: SelectionSpec,
    pub output: OutputSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::default(),
            seed: 0,
            sigma: crate::ntk::DEFAULT_SIGMA,
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            train: TrainSpec::default(),
            lipschitz: LipschitzSpec::default(),
            sketch: SketchSpec::default(),
            selection: SelectionSpec::default(),
            output: OutputSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.context(format!("reading {}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        let f = self.dataset.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("train_fraction must lie in (0, 1), got {f}")));
        }
        if self.train.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("lambda_grid values must be >= 0".into()));
        }
        if self.sketch.n_seeds == 0 || self.sketch.m == 0 {
            return Err(Error::Config("sketch needs m >= 1 and n_seeds >= 1".into()));
        }
        if self.selection.max_subset_size == 0 {
            return Err(Error::Config("max_subset_size must be at least 1".into()));
        }
        self.train.config(self.train.lambda, 0).validate().map_err(|e| e.context("train"))
    }

    /// SHA-256 of the configuration with the output location cleared, so the
    /// hash identifies the computation rather than where it was written.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputSpec::default();
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
