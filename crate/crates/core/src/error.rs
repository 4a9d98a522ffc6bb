use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("training failed at {path}: {message}")]
    Training { path: String, message: String },

    #[error("calibration failed for arm {arm}: {message}")]
    Calibration { arm: String, message: String },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("model file format error: {0}")]
    Format(String),

    #[error("fold planning failed: {0}")]
    Fold(String),

    #[error("profile error: {0}")]
    Profile(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("aggregation failed: {0}")]
    Aggregation(String),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn training(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Training {
            path: path.into(),
            message: message.into(),
        }
    }
}
