//! Error type shared across the crate.
//!
//! Variants are grouped by how the CLI reports them: validation and config
//! problems exit with 1, file problems with 2, numeric failures with 3.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Arguments or data violate a documented precondition.
    #[error("validation: {0}")]
    Validation(String),

    /// A config file line could not be parsed or names an unknown key.
    #[error("config: line {line}: {msg}")]
    Config { line: usize, msg: String },

    /// The file exists but its contents do not match the expected format.
    #[error("format: {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// The underlying read or write failed.
    #[error("i/o: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training produced a non-finite loss or parameter.
    #[error("numeric: training diverged at epoch {epoch}")]
    Training { epoch: usize },

    /// A computation produced or would produce a non-finite value.
    #[error("numeric: {0}")]
    Numeric(String),
}

impl Error {
    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Config { .. } => 1,
            Error::Format { .. } | Error::Io { .. } => 2,
            Error::Training { .. } | Error::Numeric(_) => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
