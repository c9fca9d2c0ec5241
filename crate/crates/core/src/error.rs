use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("measurement set is empty")]
    EmptyMeasurements,

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(&'static str),

    #[error("particle population is degenerate (no positive weight)")]
    DegeneratePopulation,

    #[error("sequence length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("history is empty")]
    EmptyHistory,
}

pub type Result<T> = std::result::Result<T, Error>;
