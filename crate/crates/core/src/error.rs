use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or scheme parameter is out of range.
    #[error("invalid parameter: {0}")]
    Param(String),
    /// Caller-supplied data has the wrong shape, range or content.
    #[error("invalid input: {0}")]
    Input(String),
    /// A file or payload could not be decoded into the expected format.
    #[error("format error: {0}")]
    Format(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    /// A loss or statistic became non-finite, or a matrix routine failed.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("checkpoint load error: {0}")]
    Load(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
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

    /// True for errors caused by bad user input rather than a failure while
    /// doing the work. The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Param(_) | Error::Input(_) | Error::Format(_))
    }
}
