use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input failed validation before any numerical work started.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("index out of range: {what} = {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("{path}: row {row}: {message}")]
    Table {
        path: String,
        row: usize,
        message: String,
    },

    #[error("energy grids are not aligned: {0}")]
    Misaligned(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("numerical failure at sweep {sweep}, ray {ray}: {message}")]
    Numerical {
        sweep: usize,
        ray: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Tensor { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than a failure during computation.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Numerical { .. } | Error::Io { .. })
    }
}
