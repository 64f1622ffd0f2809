use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violates a documented invariant (bad config, bad flag, bad partition).
    #[error("invalid {what}: {message}")]
    Validation { what: String, message: String },

    /// A key=value file could not be parsed.
    #[error("{path}:{line}: key `{key}`: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        key: String,
        message: String,
    },

    /// A CSV table is malformed or inconsistent with the rest of the world.
    #[error("{file}: row {row}: {message}")]
    Table {
        file: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// Regions cannot be colored with at most three colors.
    #[error("unsupported partition: {0}")]
    Coloring(String),
}

impl Error {
    pub fn validation(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            what: what.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn table(file: impl Into<PathBuf>, row: usize, message: impl Into<String>) -> Self {
        Error::Table {
            file: file.into(),
            row,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. } | Error::Config { .. } | Error::Table { .. } | Error::Coloring(_)
        )
    }
}
