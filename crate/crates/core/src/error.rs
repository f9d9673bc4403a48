use std::path::PathBuf;

use thiserror::Error;

/// Errors produced while building or running an experiment.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("strategy error: {0}")]
    Strategy(String),

    #[error("numeric error: non-finite value in client {client} at step {step}")]
    Numeric { client: usize, step: usize },

    #[error("numeric error: non-finite global model after round {round}")]
    NonFiniteModel { round: u64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unknown client {0}")]
    UnknownClient(usize),

    #[error("empty shard for client {0}")]
    EmptyShard(usize),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
