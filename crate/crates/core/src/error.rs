use std::path::PathBuf;

use thiserror::Error;

use crate::io::container::ContainerError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate feature vector")]
    DegenerateVector,

    #[error("degenerate pooled vector")]
    DegeneratePooled,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate ranking: {0}")]
    DegenerateRanking(&'static str),

    #[error("non-finite loss {value} at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, value: f64 },

    #[error("unresolved ids: {}", .0.join(", "))]
    DanglingIds(Vec<String>),

    #[error("media {media} has {available} references, {required} required")]
    InsufficientReferences {
        media: String,
        available: usize,
        required: usize,
    },

    #[error("reference {0} has no token embeddings")]
    MissingTokens(String),

    #[error("model {model} covers a different media set than {baseline}")]
    MismatchedMedia { model: String, baseline: String },

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error("{}:{line}: {message}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
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
}
