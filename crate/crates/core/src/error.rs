use thiserror::Error;

/// Errors raised by the pricing and oracle routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sample is empty")]
    EmptySample,

    #[error("failed to bracket the minimum after {iterations} expansions (bracket [{lo}, {hi}])")]
    Bracketing { iterations: usize, lo: f64, hi: f64 },

    #[error("node {node}: {reason}")]
    MalformedLattice { node: usize, reason: String },

    #[error("{count} stopping rules exceed the enumeration cap of {cap}")]
    EnumerationCap { count: f64, cap: u64 },

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("no saddle point within tolerance (duality gap {gap:e})")]
    NoSaddle { gap: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Broad class of an [`Error`], used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Bracketing { .. }
            | Error::LinearProgram(_)
            | Error::NoSaddle { .. }
            | Error::EnumerationCap { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Validation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
