use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("action out of bounds: dimension {dim} value {value} not in [{low}, {high}]")]
    OutOfBounds {
        dim: usize,
        value: f64,
        low: f64,
        high: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("factorization failed after jitter escalation (last jitter {jitter:e})")]
    Factorization { jitter: f64 },

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("unsupported version tag {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },

    #[error("malformed {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error("experiment failed for model seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, detail: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            detail: detail.to_string(),
        }
    }
}
