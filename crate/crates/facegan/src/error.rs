use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value detected in {0}")]
    NonFinite(String),

    #[error("numeric failure at step {step}: {message}")]
    Numeric { step: u64, message: String },

    #[error("manifest {path}, row {row}: {message}")]
    Manifest {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for usage/validation errors,
    /// 3 for runtime/numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_)
            | Error::InvalidArgument(_)
            | Error::Manifest { .. }
            | Error::Config(_)
            | Error::Checkpoint(_) => 2,
            Error::NonFinite(_)
            | Error::Numeric { .. }
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Json(_) => 3,
        }
    }
}
