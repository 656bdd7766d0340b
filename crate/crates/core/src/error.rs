use thiserror::Error;

/// Errors raised by the in-memory API.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CraegError {
    #[error("index {index} out of range for vocabulary of size {vocab_size}")]
    OutOfBounds { index: usize, vocab_size: usize },

    #[error("duplicate token id {0} in candidate set")]
    DuplicateId(usize),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid embedding table: {0}")]
    InvalidTable(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A statistic is undefined for the supplied data (constant input, single class, ...).
    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T, E = CraegError> = std::result::Result<T, E>;
