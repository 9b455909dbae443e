use thiserror::Error;

/// Failures surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("unsupported spatial dimension: {0}")]
    Dimension(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("tree structure: {0}")]
    Structure(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("mu = {mu} is below the admissible minimum {required}")]
    MuBelowMinimum { mu: f64, required: f64 },
    #[error("model: {0}")]
    Model(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("optimization: {0}")]
    Optimization(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
