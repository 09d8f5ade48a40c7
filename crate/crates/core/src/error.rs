//! Error type shared across the toolkit.

use std::path::PathBuf;

/// Errors produced by corpus loading, model configuration, training and
/// evaluation. The CLI maps these onto process exit codes: usage errors
/// exit 1, data/validation errors exit 2, numeric failures exit 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input data, with enough context to locate the offending row.
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    /// Validation failure on otherwise well-formed data or configuration.
    #[error("{0}")]
    Invalid(String),

    /// Undefined statistic, e.g. correlation of a zero-variance sequence.
    #[error("{0}")]
    Undefined(String),

    /// Non-finite loss or gradient; signals a diverged run.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Exit code class for the CLI: 2 for data problems, 3 for numeric ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
