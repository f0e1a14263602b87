use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("point lies behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("insufficient length: need at least {needed}, got {got}")]
    InsufficientLength { needed: usize, got: usize },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: format error: {msg}")]
    Format { path: String, msg: String },
    #[error("load error: {0}")]
    Load(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: usize },
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("empty domain: {0}")]
    EmptyDomain(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
