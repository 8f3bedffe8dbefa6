use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("measurement system mismatch: expected {expected}, got {actual}")]
    SystemMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("loss is not a scalar node (shape {0:?})")]
    NonScalarLoss(Vec<usize>),

    #[error("NaN gradient for parameter `{0}`")]
    NanGradient(String),

    #[error("loss became NaN at iteration {0}")]
    NanLoss(usize),

    #[error("measurement is identically zero")]
    ZeroMeasurement,

    #[error("correlation undefined: spectrum at ({0}, {1}) is constant")]
    ConstantSpectrum(usize, usize),

    #[error("bad magic in {path}: expected \"HSC1\"")]
    BadMagic { path: PathBuf },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
