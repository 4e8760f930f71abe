use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid magnitude level {0} (expected 0..=4)")]
    InvalidLevel(u8),

    #[error("invalid operation index {0} (expected 0..=14)")]
    InvalidOpIndex(usize),

    #[error("policy id {0} out of range (expected < 5625)")]
    PolicyIdOutOfRange(usize),

    #[error("cannot parse policy {text:?}: {reason}")]
    PolicyParse { text: String, reason: String },

    #[error("subset size {0} out of range (expected 1..=5625)")]
    SubsetSize(usize),

    #[error("duplicate policy id {0} in policy set")]
    DuplicatePolicy(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("model diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "loss table too expensive: {policies} policies x {samples} samples = {evals} evaluations \
         exceeds budget of {budget}"
    )]
    TableBudget {
        policies: usize,
        samples: usize,
        evals: usize,
        budget: usize,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
