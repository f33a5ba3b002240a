use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Corpus { line: usize, message: String },

    #[error("cannot balance domain `{domain}`: no {missing} documents")]
    Unbalanceable {
        domain: String,
        missing: &'static str,
    },

    #[error("cannot split domain `{domain}`: {count} document(s), need at least 2")]
    TooFewToSplit { domain: String, count: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{0}")]
    InvalidInput(String),

    #[error("training diverged: non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("metric undefined: {0}")]
    Undefined(&'static str),

    #[error("model file {path}: {message}")]
    Model { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
