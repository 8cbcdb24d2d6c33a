use std::path::PathBuf;

use thiserror::Error;

/// Broad failure category, used by front ends to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("rule parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("CNF conversion exceeded {limit} clauses")]
    CnfTooLarge { limit: usize },

    #[error("formula has {count} variables, compiler bound is {limit}")]
    TooManyVariables { count: usize, limit: usize },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{0}")]
    Numeric(String),

    #[error("{0}")]
    Data(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::Numeric(_) | Error::CnfTooLarge { .. } | Error::TooManyVariables { .. } => {
                ErrorClass::Numeric
            }
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
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
