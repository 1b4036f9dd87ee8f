use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum LandauError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("non-finite value at cell {index}")]
    NonFinite { index: usize },
    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("time step {dt} exceeds the stability bound {limit}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("zero mass")]
    ZeroMass,
    #[error("window [{t1}, {t2}] not covered by trajectory [{start}, {end}]")]
    WindowOutOfRange { t1: f64, t2: f64, start: f64, end: f64 },
    #[error("snapshot cadence too coarse: interval {interval} > {limit}")]
    CadenceTooCoarse { interval: f64, limit: f64 },
    #[error("empty test family")]
    EmptyFamily,
    #[error("snapshot format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LandauError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> LandauError {
    LandauError::InvalidParameter { name, reason: reason.into() }
}
