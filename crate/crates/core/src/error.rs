use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("partition mismatch: {0}")]
    PartitionMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("non-binary entry {value} at index {index}")]
    NonBinary { index: usize, value: f64 },

    #[error("entry {value} at index {index} lies outside [0, 1]")]
    OutOfBox { index: usize, value: f64 },

    #[error("problem too large for enumeration: {0}")]
    TooLarge(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid instance spec: {0}")]
    InvalidSpec(String),
}
