use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate document id {0:?}")]
    DuplicateDocument(String),

    #[error("unknown document id {0:?}")]
    UnknownDocument(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("malformed coreference clusters: {0}")]
    Coref(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("non-finite gradient: {0}")]
    NonFinite(String),

    #[error("unsupported or corrupt file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad user input (files, flags, data), as
    /// opposed to failures while running.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::DuplicateDocument(_)
            | Error::UnknownDocument(_)
            | Error::Invalid(_)
            | Error::Config(_)
            | Error::Parse { .. }
            | Error::Coref(_)
            | Error::Format(_)
            | Error::Json(_) => true,
            Error::Io(e) => e.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}
