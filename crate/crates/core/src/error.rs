use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("batch_norm: training mode needs at least 2 samples, got {0}")]
    DegenerateBatch(usize),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value at coordinate {index}: {detail}")]
    Numerical { index: usize, detail: String },

    #[error("expected a 3-channel image, got {0} channel(s)")]
    Channel(usize),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("no checkpoint for epoch {requested} in {dir}; available: {available:?}")]
    MissingCheckpoint {
        dir: PathBuf,
        requested: usize,
        available: Vec<usize>,
    },

    #[error("missing data file {0}")]
    MissingData(PathBuf),

    #[error("schema mismatch in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
