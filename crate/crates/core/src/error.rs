use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("degree mismatch: {left} vs {right}")]
    DegreeMismatch { left: usize, right: usize },

    #[error("metric is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("singular structure: |det P| = {0:e}")]
    Singular(f64),

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("sampler exhausted after {0} attempts")]
    SamplerExhausted(usize),

    #[error("internal inconsistency: {0}")]
    Inconsistent(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("cannot recover P: {0}")]
    Recovery(String),

    #[error("singular flow at t = {t}: {reason}")]
    SingularFlow { t: f64, reason: String },

    #[error("diagnostic drift {drift:e} above abort threshold {threshold:e} at t = {t}")]
    Drift { t: f64, drift: f64, threshold: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
