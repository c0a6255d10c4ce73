use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the prompt-tuning stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes that do not fit the operation.
    #[error("shape error: {0}")]
    Shape(String),
    /// NaN or infinite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A caller broke an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),
    /// A hard template is malformed or lost its mask slot.
    #[error("template error: {0}")]
    Template(String),
    #[error("vocabulary error: token id {id} is outside a vocabulary of size {vocab_size}")]
    Vocabulary { id: usize, vocab_size: usize },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// Short stable tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::Contract(_) => "contract",
            Error::Template(_) => "template",
            Error::Vocabulary { .. } => "vocabulary",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serde",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Serde(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Serde(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
