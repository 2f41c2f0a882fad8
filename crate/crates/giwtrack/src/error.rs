//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("degrees of freedom too small: {0}")]
    DegenerateDof(String),

    #[error("indefinite scale difference: {0}")]
    IndefiniteScale(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("empty measurement set")]
    EmptyMeasurementSet,

    #[error("sequence length mismatch: {0}")]
    LengthMismatch(String),

    #[error("outside the support: {0}")]
    OutsideSupport(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
