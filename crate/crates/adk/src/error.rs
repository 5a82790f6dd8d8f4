//! Crate-wide error type.

use std::path::PathBuf;

/// Unified error type for tensor, model, data, and training failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two tensors fed to a binary op had incompatible shapes.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A tensor shape or index was structurally invalid for an operation.
    #[error("invalid shape in {op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    /// An operation produced NaN or infinite values.
    #[error("non-finite values produced by {op}")]
    NonFinite { op: &'static str },

    /// A model or run configuration failed validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A checkpoint file was malformed or inconsistent.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A dataset, manifest, or image file was unusable.
    #[error("data error: {0}")]
    Data(String),

    /// Training hit a non-recoverable numeric state.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// An API was called in a way that cannot be satisfied.
    #[error("usage error: {0}")]
    Usage(String),

    /// I/O failure with the offending path attached.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// PNG encode/decode failure.
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
