//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty source directory: {0}")]
    EmptySource(PathBuf),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite loss at step {step}: {term}")]
    NonFiniteLoss { step: u64, term: String },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch { expected: expected.to_string(), got: got.to_string() }
    }
}
