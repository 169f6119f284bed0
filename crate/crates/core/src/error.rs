use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the splatting library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular covariance: {0}")]
    SingularMatrix(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Structured parse failure; `location` is a line number for text inputs
    /// or a byte offset for binary ones.
    #[error("parse error in {path}: {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("unsupported camera model `{0}` (supported: PINHOLE, SIMPLE_PINHOLE)")]
    UnsupportedCameraModel(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(
        path: impl Into<PathBuf>,
        location: impl ToString,
        message: impl ToString,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            location: location.to_string(),
            message: message.to_string(),
        }
    }
}
