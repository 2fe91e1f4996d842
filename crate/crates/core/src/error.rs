use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unstable configuration: Courant factor {courant} exceeds limit {limit:.6}")]
    Unstable { courant: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("monitor `{name}` is out of bounds: {reason}")]
    MonitorOutOfBounds { name: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("no gap detected below threshold {threshold}")]
    NoGap { threshold: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
