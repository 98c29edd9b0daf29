use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    Dimension { op: &'static str, msg: String },

    #[error("layer {layer}: {msg}")]
    Layer { layer: usize, msg: String },

    #[error("invalid input: {0}")]
    Validation(String),

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix slice {slice} is not positive definite")]
    NotPositiveDefinite { slice: usize },

    #[error("layer {layer}, group {group}: damped block still singular at damping {damping:e}")]
    SolveFailed {
        layer: usize,
        group: usize,
        damping: f64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("full FIM needs {params} parameters, oracle limit is {limit}")]
    OracleTooLarge { params: usize, limit: usize },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn dim(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            msg: msg.into(),
        }
    }
}
