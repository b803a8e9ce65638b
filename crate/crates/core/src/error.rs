use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("validation error in {record}: {message}")]
    Validation { record: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bbox {bbox} exceeds image bounds {width}x{height}")]
    OutOfBounds { bbox: String, width: u32, height: u32 },

    #[error("insufficient pool for class {class}: need {needed}, have {available} (short by {})", needed - available)]
    InsufficientPool { class: String, needed: usize, available: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("batchnorm running statistics are uninitialized; run a training step first")]
    UninitializedStats,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for usage/IO failures, 1 for domain errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Image { .. } => 2,
            _ => 1,
        }
    }
}
