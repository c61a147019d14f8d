use thiserror::Error;

/// Errors produced anywhere in the watermarking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error(
        "sinkhorn did not converge after {iterations} iterations \
         (row residual {row_residual:.3e}, column residual {col_residual:.3e})"
    )]
    SolverNonConvergence {
        iterations: usize,
        row_residual: f64,
        col_residual: f64,
    },

    #[error("tie at column {column} (angle {angle:.6}) between tokens {first} and {second}")]
    Tie {
        column: usize,
        angle: f64,
        first: usize,
        second: usize,
    },

    #[error("two-point rule sends {first_columns} of {columns} columns to token {first}; marginal 1/2 is unreachable")]
    TwoPointImbalance {
        first: usize,
        first_columns: usize,
        columns: usize,
    },

    #[error("stream error: {0}")]
    Stream(String),

    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error("decoding failed: every candidate has infinite distance")]
    DecodeFailure,

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
