use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the toolkit.
///
/// `Data`-class errors (bad files, malformed inputs) are distinguished from
/// `Usage`-class errors (bad parameters) so front ends can map them to
/// different exit statuses.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("covariance `{name}` is not positive semidefinite: {detail}")]
    NotPsd { name: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("label {label} out of range for {k} clusters (trajectory {index})")]
    LabelOutOfRange { index: usize, label: usize, k: usize },

    #[error("instance too large for exhaustive search: {k}^{n} assignments exceeds budget of {budget}")]
    BudgetExceeded { k: usize, n: usize, budget: u64 },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    /// True for errors caused by input data or files rather than by parameters.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Io { .. }
                | Error::Json { .. }
                | Error::NonFinite(_)
                | Error::Insufficient(_)
                | Error::Shape(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
