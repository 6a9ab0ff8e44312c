use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("degenerate vector: norm {norm:e} is below {threshold:e}")]
    DegenerateVector { norm: f64, threshold: f64 },

    #[error("parallel vectors: projected norm {norm:e} is below {threshold:e}")]
    ParallelVectors { norm: f64, threshold: f64 },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("single-class input: {0}")]
    SingleClass(String),

    #[error("not enough samples: need at least {needed}, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("missing latents for source `{source_name}`: {detail}")]
    MissingLatents { source_name: String, detail: String },

    #[error("non-orthogonal normal set: |dot| = {dot:e} exceeds {tolerance:e}")]
    NonOrthogonal { dot: f64, tolerance: f64 },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("{what} not found: {path}")]
    NotFound { what: &'static str, path: PathBuf },

    #[error("malformed artifact {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("png encoding: {0}")]
    Png(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, detail: impl ToString) -> Self {
        Error::Malformed {
            path: path.into(),
            detail: detail.to_string(),
        }
    }
}
