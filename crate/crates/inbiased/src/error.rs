//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Configuration rejected before any work started.
    #[error("config error: {0}")]
    Config(String),

    /// A dataset could not be found or ingested.
    #[error("data error: {0}")]
    Data(String),

    /// A dataset directory or file is missing; includes the layout the loader expected.
    #[error("missing data for dataset `{dataset}` under {root}: {expected_layout}")]
    MissingData {
        dataset: String,
        root: PathBuf,
        expected_layout: String,
    },

    /// Stored bytes do not match the recorded content hash.
    #[error("checksum mismatch for {path}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    /// Tensor shapes are inconsistent with what an operation requires.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An input contained NaN or infinity where finite values are required.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// A training loss left the finite range; the run is aborted.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// Checkpoint container could not be read or written.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Image decode/encode failure.
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    /// JSON (de)serialization failure.
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code contract: 2 config, 3 data, 4 divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::MissingData { .. } | Error::ChecksumMismatch { .. } => 3,
            Error::Divergence(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
