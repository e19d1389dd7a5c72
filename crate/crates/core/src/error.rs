use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid problem ({count} violation(s)); first: {first}")]
    InvalidProblem { count: usize, first: String },

    #[error("factorization failed at sub-system {subsystem}: {detail}")]
    Factorization { subsystem: usize, detail: String },

    #[error("dense system of dimension {dim} exceeds cap {cap}")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("dense KKT matrix is numerically singular")]
    SingularMatrix,

    #[error("message from agent {from} to agent {to} is not between neighbours")]
    NonNeighborMessage { from: usize, to: usize },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
