//! Error type shared by every module of the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fields live on different grids ({left} vs {right})")]
    GridMismatch { left: String, right: String },

    #[error("unsupported derivative order {0} (expected 1 or 2)")]
    UnsupportedOrder(u32),

    #[error("Bessel exponent {0} exceeds the overflow guard |s| <= 64")]
    ExponentOverflow(f64),

    #[error("scaled support [{lo}, {hi}] exceeds the domain half-width {half_width}")]
    SupportOverflow { lo: f64, hi: f64, half_width: f64 },

    #[error("grid spacing {spacing} too coarse for frequency {n} (need <= {required})")]
    Resolution { n: f64, spacing: f64, required: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("scaling fit: {0}")]
    Fit(String),

    #[error("hyperbolicity margin violated: {0}")]
    Margin(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("report: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
