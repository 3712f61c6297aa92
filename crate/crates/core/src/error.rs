use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read image {path}: {message}")]
    Unreadable { path: PathBuf, message: String },

    #[error("unsupported image layout: {0} (expected single-channel 8- or 16-bit)")]
    UnsupportedLayout(String),

    #[error("image is {width}x{height}; both sides must be at least {min}")]
    TooSmall { width: usize, height: usize, min: usize },

    #[error("pixel values must be finite and within [0, 1]")]
    InvalidIntensity,

    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    #[error("region of interest does not fit inside the {width}x{height} image")]
    RoiOutOfBounds { width: usize, height: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("mask is empty")]
    EmptyMask,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown element id {0}")]
    UnknownElement(usize),

    #[error("{0}")]
    Metric(String),

    #[error("malformed table: {0}")]
    MalformedTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("image encoding failed: {0}")]
    Encode(String),
}
