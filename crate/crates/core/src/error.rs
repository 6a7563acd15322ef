use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants split into validation failures (bad shapes, bad config, bad
/// inputs) and numeric failures (singular systems, divergence, vacuous
/// bounds); [`Error::is_numeric`] tells them apart for CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("matrix is singular or indefinite (lambda_min = {lambda_min:e}): {context}")]
    Singular { lambda_min: f64, context: String },

    #[error("matrix is not positive semi-definite (lambda_min = {lambda_min:e})")]
    NotPsd { lambda_min: f64 },

    #[error("numeric divergence at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("bound is vacuous: eta = {eta} >= 1")]
    VacuousBound { eta: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("enumeration limit: {subsets} subsets of {candidates} candidates exceeds {limit}; lower max_subset_size")]
    EnumerationLimit {
        candidates: usize,
        subsets: u64,
        limit: u64,
    },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Singular { .. }
            | Error::NotPsd { .. }
            | Error::Divergence { .. }
            | Error::VacuousBound { .. }
            | Error::NoConvergence { .. } => true,
            Error::Context { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    /// Process exit code: 1 for validation errors, 2 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        if self.is_numeric() {
            2
        } else {
            1
        }
    }
}
