//! Error taxonomy shared by every module in the crate.

use thiserror::Error;

/// All failure modes surfaced by the engine.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Operand shapes do not conform (matmul ranks, vector lengths, ...).
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A caller violated an API precondition (non-scalar loss, missing grad,
    /// stepping a finished episode, ...).
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    /// Mathematically invalid input (normalizing a zero-length axis, ...).
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A file could not be parsed; carries the 1-based line number.
    #[error("parse error in {path} line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    /// Structurally valid input that violates a data invariant
    /// (non-monotone dates, empty date intersection, bad OHLC bounds).
    #[error("data error: {0}")]
    Data(String),

    /// A computation produced NaN/Inf or otherwise left the finite domain.
    #[error("numeric failure in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    /// Checkpoint file malformed or incompatible with the requested model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub fn numeric(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::Numeric {
            op,
            detail: detail.into(),
        }
    }
}
