use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible dispatch: required {required_kw:.6} kW exceeds net capacity {capacity_kw:.6} kW")]
    InfeasibleDispatch { required_kw: f64, capacity_kw: f64 },

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid profile file: {0}")]
    Profile(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown prosumer id {0}")]
    UnknownProsumer(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("training diverged for agent {agent} in episode {episode}: {message}")]
    Training {
        agent: String,
        episode: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
