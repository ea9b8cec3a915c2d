//! Learned temporal selection: a DQN decides per non-empty semantic message
//! whether to transmit it, with reconstruction-error constraints handled by
//! PID-controlled Lagrange multipliers.

pub mod dqn;
pub mod env;
pub mod mlp;
pub mod pid;
pub mod replay;

pub use dqn::{DqnAgent, DqnConfig, EpsilonSchedule, InputScaler};
pub use env::{run_episode, EpisodeLog, Gate, MessageSource, SlotRecord};
pub use mlp::{Mlp, RmsProp, RmsPropConfig};
pub use pid::{PidGains, PidLagrangianState, PidMultiplier};
pub use replay::{ReplayBuffer, Transition};
