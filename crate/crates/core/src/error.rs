//! Error type shared by every stage of the toolkit.

use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Config,
    Io,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::FeatureMismatch(_) | Error::InvalidInput(_) => {
                ErrorKind::Config
            }
            Error::EmptySelection(_) => ErrorKind::Config,
            Error::Parse { .. } | Error::Io { .. } | Error::Format { .. } => ErrorKind::Io,
            Error::Numerical(_) => ErrorKind::Numerical,
        }
    }

    /// An equivalent error; I/O sources are re-created from their kind and
    /// message.
    pub fn duplicate(&self) -> Error {
        match self {
            Error::Config(m) => Error::Config(m.clone()),
            Error::FeatureMismatch(m) => Error::FeatureMismatch(m.clone()),
            Error::Parse { line, message } => Error::Parse {
                line: *line,
                message: message.clone(),
            },
            Error::Io { path, source } => Error::Io {
                path: path.clone(),
                source: std::io::Error::new(source.kind(), source.to_string()),
            },
            Error::Format { path, message } => Error::Format {
                path: path.clone(),
                message: message.clone(),
            },
            Error::Numerical(m) => Error::Numerical(m.clone()),
            Error::EmptySelection(m) => Error::EmptySelection(m.clone()),
            Error::InvalidInput(m) => Error::InvalidInput(m.clone()),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
