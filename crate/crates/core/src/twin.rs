//! Digital-twin state and the normalized reconstruction error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::message::SemanticMessage;
use crate::robot::{JointVector, JointVelVector, KinematicChain};
use crate::trajectory::GroundTruthSlot;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwinMode {
    Hold,
    #[default]
    Extrapolate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    Signed,
    #[default]
    Absolute,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub e_q: f64,
    pub e_qdot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinState {
    pub q_hat: JointVector,
    pub qdot_hat: JointVelVector,
    pub gripper_hat: bool,
    pub last_rx_q: Option<JointVector>,
    /// Slot of the last angle update; `-1` is the shared start pose.
    pub last_rx_slot: Option<i64>,
    pub mode: TwinMode,
    pub dt: f64,
    /// Force from the most recent delivered message (logged, not simulated).
    pub last_force: Option<[f64; 3]>,
}

impl TwinState {
    /// Twin with no angle history: the first angle message sets velocity 0.
    pub fn new(q0: JointVector, mode: TwinMode, dt: f64) -> Self {
        let n = q0.len();
        Self {
            q_hat: q0,
            qdot_hat: JointVelVector::zeros(n),
            gripper_hat: false,
            last_rx_q: None,
            last_rx_slot: None,
            mode,
            dt,
            last_force: None,
        }
    }

    /// Twin that starts from the same known pose as the physical arm at rest.
    pub fn synced(q0: JointVector, mode: TwinMode, dt: f64) -> Self {
        let mut tw = Self::new(q0.clone(), mode, dt);
        tw.last_rx_q = Some(q0);
        tw.last_rx_slot = Some(-1);
        tw
    }

    /// Apply a delivered message received in slot `t`.
    pub fn apply_message(&mut self, chain: &KinematicChain, msg: &SemanticMessage, t: usize) -> Result<()> {
        if let Some(q) = &msg.q {
            if q.len() != chain.n_joints() {
                return Err(Error::DimensionMismatch { expected: chain.n_joints(), got: q.len() });
            }
            let t = t as i64;
            match (&self.last_rx_q, self.last_rx_slot) {
                (Some(prev), Some(prev_t)) if t > prev_t => {
                    let span = (t - prev_t) as f64 * self.dt;
                    for ((v, a), b) in self.qdot_hat.iter_mut().zip(q).zip(prev.iter()) {
                        *v = (a - b) / span;
                    }
                    chain.clamp_qdot(&mut self.qdot_hat);
                }
                _ => self.qdot_hat.iter_mut().for_each(|v| *v = 0.0),
            }
            self.q_hat = JointVector(q.clone());
            chain.clamp_q(&mut self.q_hat);
            self.last_rx_q = Some(JointVector(q.clone()));
            self.last_rx_slot = Some(t);
        }
        if let Some(g) = msg.gripper {
            self.gripper_hat = g;
        }
        if let Some(f) = msg.force {
            self.last_force = Some(f);
        }
        Ok(())
    }

    /// Move the twin one slot forward without new information.
    pub fn advance(&mut self, chain: &KinematicChain) {
        match self.mode {
            TwinMode::Hold => self.qdot_hat.iter_mut().for_each(|v| *v = 0.0),
            TwinMode::Extrapolate => {
                for ((q, v), j) in self.q_hat.iter_mut().zip(self.qdot_hat.iter_mut()).zip(chain.joints()) {
                    let next = *q + *v * self.dt;
                    let clamped = next.clamp(j.q_min, j.q_max);
                    if clamped != next {
                        *v = 0.0;
                    }
                    *q = clamped;
                }
            }
        }
    }
}

/// Per-joint differences normalized by the limit ranges, averaged over joints.
pub fn reconstruction_error(
    truth: &GroundTruthSlot,
    tw: &TwinState,
    chain: &KinematicChain,
    mode: ErrorMode,
) -> Result<ErrorSample> {
    let n = chain.n_joints();
    for len in [truth.q.len(), truth.qdot.len(), tw.q_hat.len(), tw.qdot_hat.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    let mut sq = 0.0;
    let mut sv = 0.0;
    for (k, j) in chain.joints().iter().enumerate() {
        if j.q_range() <= 0.0 || j.qdot_range() <= 0.0 {
            return Err(Error::ZeroWidthRange { joint: k });
        }
        let dq = (truth.q[k] - tw.q_hat[k]) / j.q_range();
        let dv = (truth.qdot[k] - tw.qdot_hat[k]) / j.qdot_range();
        match mode {
            ErrorMode::Absolute => {
                sq += dq.abs();
                sv += dv.abs();
            }
            ErrorMode::Signed => {
                sq += dq;
                sv += dv;
            }
        }
    }
    let nf = n as f64;
    Ok(ErrorSample { e_q: (sq / nf).abs(), e_qdot: (sv / nf).abs() })
}
