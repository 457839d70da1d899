use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while reading or writing TTDT tensors and manifests.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("truncated tensor in {path}: expected {expected} payload bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("validation error in {path}: {reason}")]
    Validation { path: PathBuf, reason: String },
    #[error("manifest {path} line {line}: malformed JSON: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("manifest {path} line {line}: schema error on field `{field}`: {reason}")]
    Schema {
        path: PathBuf,
        line: usize,
        field: String,
        reason: String,
    },
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate vector: {0}")]
    DegenerateVector(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: non-finite loss")]
    Divergence { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
