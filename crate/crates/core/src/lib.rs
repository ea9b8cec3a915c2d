//! Goal-oriented semantic communication for digital-twin reconstruction of a
//! robot arm.
//!
//! The pipeline per 1 ms slot: a scripted ground-truth trajectory
//! ([`trajectory`]) is filtered by phase-aware feature selection
//! ([`features`]), optionally gated by a learned transmit/drop policy
//! ([`agent`]), sent over a Nakagami-m fading uplink ([`channel`]) and applied
//! to the twin ([`twin`]). [`experiment`] runs the four transmission schemes
//! and writes logs and summaries.

pub mod agent;
pub mod channel;
pub mod error;
pub mod experiment;
pub mod features;
pub mod message;
pub mod robot;
pub mod trajectory;
pub mod twin;

pub use channel::{ChannelParams, LinkOutcome, UplinkChannel};
pub use error::{Error, Result};
pub use features::{FSState, FSThresholds, Selection};
pub use message::{FullMessage, SemanticMessage, FULL_MESSAGE_BYTES};
pub use robot::{JointParams, JointVector, JointVelVector, KinematicChain};
pub use trajectory::{GroundTruthSlot, Phase, TaskKind, TaskScript, Trajectory};
pub use twin::{ErrorMode, ErrorSample, TwinMode, TwinState};

/// Slot length used by every default script (1 ms).
pub const DEFAULT_DT: f64 = 1e-3;
