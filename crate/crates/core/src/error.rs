use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A caller-side precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("invalid permutation: {0}")]
    Permutation(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("checksum mismatch: manifest says {expected:08x}, blob hashes to {actual:08x}")]
    Checksum { expected: u32, actual: u32 },

    #[error("unsupported format version {0}")]
    Version(u32),

    #[error("degenerate reference: {0}")]
    Degenerate(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line frontend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            _ => 2,
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Contract(_) => "contract",
            Error::Spec(_) => "spec",
            Error::Permutation(_) => "permutation",
            Error::Format { .. } => "format",
            Error::Checksum { .. } => "checksum",
            Error::Version(_) => "version",
            Error::Degenerate(_) => "degenerate",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
