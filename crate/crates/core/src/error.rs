use thiserror::Error;

/// Errors produced anywhere in the recovery pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix has non-finite entries")]
    NonFiniteMatrix,

    #[error("SPD factorization failed for every jitter level up to {last_jitter:e}")]
    FactorizationFailed { last_jitter: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("parameter {name} = {value} outside [{lo}, {hi}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("simulation produced a non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("subsampling factor {k} too large for a trajectory of length {len}")]
    FactorTooLarge { k: usize, len: usize },

    #[error("trajectory too short: length {0}")]
    TooShort(usize),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("optimizer budget {budget} is too small")]
    BudgetTooSmall { budget: usize },

    #[error("truth vector has zero norm")]
    ZeroTruthNorm,

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
