use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller handed in something malformed (bad dimension, bad parameter).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid specification: {0}")]
    Spec(String),

    #[error("{path}:{line}: {msg}")]
    Config { path: PathBuf, line: usize, msg: String },

    #[error("numerical failure at iteration {iteration}: {msg}")]
    Numerical { iteration: u64, msg: String },

    #[error("target density returned {value} at iteration {iteration}")]
    NonFiniteTarget { iteration: u64, value: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: parse error: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("restart refused: {0}")]
    RestartRefused(String),

    #[error("simulation with prefix {0} is already complete")]
    AlreadyComplete(String),

    /// Raised by the interrupt hook once the files are flushed at a checkpoint.
    #[error("simulation interrupted after checkpoint at iteration {iteration}")]
    Interrupted { iteration: u64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
