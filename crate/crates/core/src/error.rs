use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed binary input; `offset` is the byte position where decoding failed.
    #[error("parse error in {path} at byte {offset}: {msg}")]
    Parse {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    /// Malformed text input (hierarchy or config files).
    #[error("{path}:{line}: {msg}")]
    Validation {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A pipeline worker failed; `source` is the error it hit.
    #[error("pipeline stage {layer} failed: {source}")]
    Stage {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// The innermost error, looking through pipeline stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! arg_err {
    ($($t:tt)*) => { $crate::error::Error::Argument(format!($($t)*)) };
}
pub(crate) use arg_err;
