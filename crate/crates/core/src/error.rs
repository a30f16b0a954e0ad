use std::io;
use std::path::Path;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: invalid UTF-8")]
    Utf8 { path: String, line: usize },

    #[error("line count mismatch {source_lines}≠{target_lines}")]
    LineCountMismatch { source_lines: usize, target_lines: usize },

    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },

    #[error("index {index} out of range for corpus of {n} pairs")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("empty selection")]
    EmptySelection,

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: u32, batch: usize },

    #[error("example {id}: {source}")]
    Example {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    pub(crate) fn malformed(path: impl AsRef<Path>, line: usize, message: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.as_ref().display().to_string(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad input or arguments, as opposed to
    /// failures while running (I/O, divergence).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Diverged { .. } | Error::Json(_) => false,
            Error::Example { source, .. } | Error::Stage { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}
