use std::path::PathBuf;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("unsupported functional: {0}")]
    UnsupportedFunctional(String),
    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),
    #[error("grid too small: {message} (suggested extent {suggested_extent})")]
    GridTooSmall { message: String, suggested_extent: f64 },
    #[error("tolerance not met: {0}")]
    Tolerance(String),
    #[error("reference backends disagree: {0}")]
    ReferenceInconsistency(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
