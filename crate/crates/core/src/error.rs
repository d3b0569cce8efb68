use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments. Maps to CLI exit code 2.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data. Maps to CLI exit code 3.
    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown strategy `{0}` (expected one of random, entropy, confidence, montecarlo, coreset, badge, crb, tcrb)")]
    UnknownStrategy(String),

    #[error("invalid budget: {0}")]
    InvalidBudget(String),

    #[error("training produced no candidates from {frames} labeled frames")]
    NoCandidates { frames: usize },

    #[error("model has not been trained")]
    Untrained,

    #[error("pool error: {0}")]
    Pool(String),

    #[error("{0}")]
    Selection(String),

    #[error("run directory {0} is locked by another process")]
    Locked(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for configuration problems, 3 for
    /// everything that originates in data or the filesystem.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownStrategy(_) | Error::InvalidBudget(_) => 2,
            _ => 3,
        }
    }
}
