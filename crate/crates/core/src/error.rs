use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("stale Top-K record: gaussian index {index} out of range for a map of {len}")]
    StaleIndex { index: usize, len: usize },

    #[error("render from map generation {render} applied to map generation {map}")]
    GenerationMismatch { render: u64, map: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("need at least 3 associated pose pairs, got {0}")]
    TooFewPairs(usize),

    #[error("feature dimension {dim} is smaller than the class count {classes}")]
    FeatureDimTooSmall { dim: usize, classes: usize },

    #[error("unknown class '{name}'; known classes: {known}")]
    UnknownClass { name: String, known: String },

    #[error("{}: {message}", path.display())]
    Dataset { path: PathBuf, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dataset(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
