use std::path::PathBuf;

/// Errors surfaced by learners, data loaders and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric degeneracy: {0}")]
    NumericDegeneracy(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

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

    /// Coarse category, used by the CLI to pick an exit code.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Parameter(_) | Error::Config(_) | Error::Schema(_) | Error::Parse { .. } => {
                ErrorCategory::Validation
            }
            Error::Io { .. } => ErrorCategory::Io,
            Error::NumericDegeneracy(_) | Error::Aggregation(_) => ErrorCategory::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Io,
    Numeric,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
