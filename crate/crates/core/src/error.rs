use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("joint {joint} has a zero-width or inverted limit range")]
    ZeroWidthRange { joint: usize },

    #[error("invalid kinematic chain: {0}")]
    InvalidChain(String),

    #[error("invalid script: {0}")]
    InvalidScript(String),

    #[error("waypoint {waypoint} joint {joint} value {value} is outside its limits")]
    WaypointOutOfLimits { waypoint: usize, joint: usize, value: f64 },

    #[error("segment {segment} exceeds the velocity limit of joint {joint} (peak {peak:.4} rad/s at slot {slot})")]
    VelocityLimitExceeded { segment: usize, joint: usize, slot: usize, peak: f64 },

    #[error("anomaly at slot {slot}: {kind}")]
    Anomaly { slot: usize, kind: crate::features::AnomalyKind },

    #[error("invalid channel parameters: {0}")]
    InvalidChannel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("replay buffer holds {len} transitions, batch needs {batch}")]
    BufferUnderfull { len: usize, batch: usize },

    #[error("negative PID gain")]
    NegativeGain,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ZeroWidthRange { .. } | Error::InvalidChain(_) => "invalid_chain",
            Error::InvalidScript(_) | Error::WaypointOutOfLimits { .. } | Error::VelocityLimitExceeded { .. } => {
                "invalid_script"
            }
            Error::Anomaly { .. } => "anomaly",
            Error::InvalidChannel(_) => "invalid_channel",
            Error::Config(_) | Error::NegativeGain => "config",
            Error::BufferUnderfull { .. } => "buffer_underfull",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
