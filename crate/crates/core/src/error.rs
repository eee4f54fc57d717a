use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("target is not one-hot at element {0}")]
    NotOneHot(usize),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("optimization diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error(transparent)]
    GridIo(#[from] GridIoError),
}

/// Failures while reading or writing grid files.
#[derive(Debug, Error)]
pub enum GridIoError {
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("unsupported content: {0}")]
    Unsupported(String),
}
