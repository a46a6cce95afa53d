use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("non-finite coordinate at point {point}, axis {axis}")]
    NonFinite { point: usize, axis: usize },

    #[error("vertex index {index} out of range for {n} vertices")]
    InvalidIndex { index: usize, n: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("graphs are built over different point clouds")]
    CloudMismatch,

    #[error("no analytic ground truth for {0}")]
    NoOracle(String),

    #[error("{path}: line {line}: {reason}")]
    Parse { path: PathBuf, line: u64, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
