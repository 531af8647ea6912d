use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the estimation, transport and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("not a probability distribution: {0}")]
    NotNormalized(String),

    #[error("state index {index} out of range for {state_count} states")]
    StateOutOfRange { index: usize, state_count: usize },

    #[error("observation carries no support under the predicted belief")]
    ZeroEvidence,

    #[error("empty model set: {0}")]
    EmptyModelSet(String),

    #[error("solver failure: {0}")]
    Solver(String),
}
