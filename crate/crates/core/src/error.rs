use thiserror::Error;

#[derive(Error, Debug)]
pub enum HawkesError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("non-stationary model: spectral radius {0:.6} >= 1")]
    NonStationary(f64),
    #[error("degenerate model: {0}")]
    Degenerate(String),
    #[error("invalid event stream: {0}")]
    InvalidStream(String),
    #[error("event type {got} out of range 1..={m}")]
    InvalidEventType { got: usize, m: usize },
    #[error("negative time step {0}")]
    NegativeTimeStep(f64),
    #[error("runaway simulation: more than {0} events")]
    Runaway(usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("optimizer failure: {0}")]
    Optimizer(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HawkesError>;
