use thiserror::Error;

/// Errors produced by the simulation, operator and rate-function layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("path has {got} values, grid expects {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("grids differ: {0}")]
    GridMismatch(String),

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("heavy-tailed family `{0}` has no finite exponential moment near zero")]
    HeavyTailed(String),

    #[error("unknown distribution family `{0}`")]
    UnknownFamily(String),

    #[error("path must start nonnegative, got x(0) = {0}")]
    NegativeStart(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error("{method} did not converge after {iterations} iterations (last change {residual:e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
