use thiserror::Error;

/// Errors produced by the group, signal and quadrature routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("singular matrix: |det| = {det:e} is at or below the singularity threshold")]
    SingularMatrix { det: f64 },

    #[error("invalid chart point: {0}")]
    InvalidChartPoint(String),

    #[error("invalid chart axis: {0}")]
    InvalidAxis(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("chart mismatch: {0}")]
    ChartMismatch(String),

    #[error("non-finite integrand sample at {0}")]
    NonFiniteSample(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("empty search box: {0}")]
    EmptySearchBox(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
