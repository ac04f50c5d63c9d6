use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: invalid UTF-8")]
    Utf8 { path: PathBuf, line: usize },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenId { id: u32, size: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("backward called without a recorded forward pass")]
    NoGraph,

    #[error("checkpoint: bad magic bytes")]
    BadMagic,

    #[error("checkpoint: unsupported version {0}")]
    Version(u16),

    #[error("checkpoint: truncated payload while reading {0}")]
    Truncated(&'static str),

    #[error("checkpoint: unexpected tensor `{0}`")]
    UnexpectedTensor(String),

    #[error("checkpoint: missing tensor `{0}`")]
    MissingTensor(String),

    #[error("checkpoint: {0}")]
    Format(String),

    #[error("freeze violated: {0} changed while the other transferrer was updated")]
    FreezeViolation(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
