use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode/encode failed for {}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mask {} has value {value} at (row {row}, col {col}); only 0 and 255 are allowed", path.display())]
    InvalidMaskValue {
        path: PathBuf,
        value: u8,
        row: usize,
        col: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("weight file error: {0}")]
    Weights(String),

    #[error("report parse error: {0}")]
    Report(String),

    #[error("non-finite loss at iteration {iteration}; last good checkpoint: {last_good}")]
    NonFiniteLoss { iteration: usize, last_good: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
