//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear solve failed on a system that should be nonsingular: {0}")]
    SingularSystem(String),

    #[error("simplex internal error: {0}")]
    LpInternal(String),

    #[error("model admits no safe policy (constraint LP infeasible)")]
    NoSafePolicy,

    #[error("insufficient data: need {required} tuples, have {available}")]
    InsufficientData { required: usize, available: usize },

    #[error("sample stream exhausted after {consumed} tuples")]
    StreamExhausted { consumed: usize },

    #[error("behavior chain is not irreducible/aperiodic: {0}")]
    ChainNotErgodic(String),

    #[error("mixing time not reached within {cap} matrix powers (near-periodic chain?)")]
    MixingCapExceeded { cap: usize },

    #[error("invalid solver configuration: {0}")]
    Config(String),

    #[error(
        "adaptive driver hit the round cap ({cap}) without certifying two consecutive rounds; \
         the instance's concentrability is effectively unbounded at this budget"
    )]
    RoundCapExceeded { cap: usize },

    #[error(
        "x-update: no KKT case validated within tolerance (indicates tolerance misconfiguration)"
    )]
    KktNoCase,

    #[error("instance generation failed: {0}")]
    Instance(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
