use thiserror::Error;

use crate::gf2::Gf2Error;
use crate::tensor::ShapeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("code {name}: computed k = {computed}, expected {expected}")]
    LogicalCount {
        name: String,
        computed: usize,
        expected: usize,
    },
    #[error("invalid code: {0}")]
    Code(String),
    #[error("invalid decoding model: {0}")]
    Model(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("syndrome has no solution")]
    Infeasible,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
