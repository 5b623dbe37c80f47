use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape4;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape4,
        right: Shape4,
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model already fused")]
    AlreadyFused,
    #[error("backward pass requires a training-mode tape")]
    MissingTape,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("dataset: {0}")]
    Dataset(String),
}

/// Failure modes of the binary weight/checkpoint format.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("CRC mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Crc { stored: u32, computed: u32 },
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("malformed content: {0}")]
    Malformed(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
