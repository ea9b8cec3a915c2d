//! Phase-aware feature selection for the three tasks.
//!
//! Each slot is classified from the sensed end-effector speed, contact force,
//! force derivative and gripper-width derivative, and the phase decides which
//! fields of the full message are worth sending. Gripper state follows a
//! semantics-aware policy: it is only sent while the physical state differs
//! from the last state the twin acknowledged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::message::{FieldSet, SemanticMessage};
use crate::robot::KinematicChain;
use crate::trajectory::{end_effector_velocity, GroundTruthSlot, Phase, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FSThresholds {
    /// Static/moving boundary on end-effector speed, m/s.
    pub v_th: f64,
    /// Force sensor resolution, N.
    pub rho1: f64,
    /// Force derivative threshold, N/s.
    pub rho2: f64,
}

impl Default for FSThresholds {
    fn default() -> Self {
        Self { v_th: 1e-4, rho1: 0.1, rho2: 5.0 }
    }
}

impl FSThresholds {
    pub fn validate(&self) -> Result<()> {
        if [self.v_th, self.rho1, self.rho2].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config("feature-selection thresholds must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    CollisionOrSlip,
    GraspFailure,
}

impl std::fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AnomalyKind::CollisionOrSlip => "collision detected or object slipped",
            AnomalyKind::GraspFailure => "grasp failure or mishandling",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyPolicy {
    #[default]
    Halt,
    /// Record the anomaly, emit nothing and keep going.
    Continue,
}

/// Quantities the classifier looks at for one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensedFeatures {
    pub v_norm: f64,
    pub v_z: f64,
    pub f_norm: f64,
    pub f_dot: f64,
    pub r_dot: f64,
    pub gripper: bool,
}

/// Outcome of the pure classifier: the fired phase and the field set, or an
/// anomaly.
pub type Classification = std::result::Result<(Phase, FieldSet), AnomalyKind>;

/// Pick-and-place branches (also push-and-pull when `push_pull` is set).
fn classify_place_like(x: &SensedFeatures, th: &FSThresholds, belief: bool, push_pull: bool) -> Classification {
    let mismatch = x.gripper != belief;
    if x.v_norm > th.v_th {
        if x.f_norm <= th.rho1 {
            return Ok((Phase::Reach, FieldSet::Q));
        }
        let steady = x.f_dot.abs() <= th.rho2;
        if push_pull {
            if steady && x.v_z.abs() < th.v_th {
                return Ok((Phase::PushPull, FieldSet::Q_FORCE));
            }
        } else if steady {
            return Ok((Phase::Transport, FieldSet::Q_FORCE));
        }
        return Err(AnomalyKind::CollisionOrSlip);
    }
    if mismatch {
        if x.f_dot > th.rho2 {
            Ok((Phase::Grasp, FieldSet::GRIPPER_FORCE))
        } else if x.f_norm > th.rho1 {
            Ok((Phase::PreRelease, FieldSet::GRIPPER))
        } else if x.r_dot > 0.0 {
            Ok((Phase::Release, FieldSet::GRIPPER))
        } else {
            Err(AnomalyKind::GraspFailure)
        }
    } else {
        // Nothing to send; the phase is advisory only.
        let phase = if x.f_dot > th.rho2 {
            Phase::Grasp
        } else if x.f_norm > th.rho1 {
            Phase::PreRelease
        } else if x.r_dot > 0.0 {
            Phase::Release
        } else {
            Phase::Pause
        };
        Ok((phase, FieldSet::EMPTY))
    }
}

pub fn classify_pick_place(x: &SensedFeatures, th: &FSThresholds, belief: bool) -> Classification {
    classify_place_like(x, th, belief, false)
}

pub fn classify_push_pull(x: &SensedFeatures, th: &FSThresholds, belief: bool) -> Classification {
    classify_place_like(x, th, belief, true)
}

/// Pick-and-toss branches. The toss carries the gripper state with every
/// joint update; while moving, an outstanding gripper change keeps the toss
/// branch after contact is lost.
pub fn classify_pick_toss(x: &SensedFeatures, th: &FSThresholds, belief: bool) -> Classification {
    let mismatch = x.gripper != belief;
    if x.v_norm > th.v_th {
        if x.f_norm > th.rho1 || mismatch {
            return Ok((Phase::Toss, FieldSet::Q_GRIPPER));
        }
        return Ok((Phase::Reach, FieldSet::Q));
    }
    if x.f_norm > th.rho1 {
        Ok((Phase::PreToss, FieldSet::Q))
    } else if x.f_dot > th.rho2 && mismatch {
        Ok((Phase::Grasp, FieldSet::GRIPPER_FORCE))
    } else if x.f_dot > th.rho2 {
        Ok((Phase::Grasp, FieldSet::EMPTY))
    } else {
        Ok((Phase::Pause, FieldSet::EMPTY))
    }
}

pub fn classify(task: TaskKind, x: &SensedFeatures, th: &FSThresholds, belief: bool) -> Classification {
    match task {
        TaskKind::PickPlace => classify_pick_place(x, th, belief),
        TaskKind::PickToss => classify_pick_toss(x, th, belief),
        TaskKind::PushPull => classify_push_pull(x, th, belief),
    }
}

/// Sender-side memory: the gripper state the twin last acknowledged and the
/// previous force norm / width for backward differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FSState {
    pub twin_gripper_belief: bool,
    pub prev_force_norm: Option<f64>,
    pub prev_gripper_width: Option<f64>,
}

impl Default for FSState {
    fn default() -> Self {
        Self { twin_gripper_belief: false, prev_force_norm: None, prev_gripper_width: None }
    }
}

impl FSState {
    /// Update the belief from a delivered message.
    pub fn on_ack(&mut self, acked: &SemanticMessage) {
        if let Some(g) = acked.gripper {
            self.twin_gripper_belief = g;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Advisory phase label.
    pub phase: Phase,
    pub message: SemanticMessage,
    pub anomaly: Option<AnomalyKind>,
    pub features: SensedFeatures,
}

/// Per-episode feature selector.
#[derive(Debug, Clone)]
pub struct FeatureSelector {
    pub task: TaskKind,
    pub thresholds: FSThresholds,
    pub policy: AnomalyPolicy,
    pub dt: f64,
    pub state: FSState,
    pub anomalies: usize,
}

impl FeatureSelector {
    pub fn new(task: TaskKind, thresholds: FSThresholds, policy: AnomalyPolicy, dt: f64) -> Self {
        Self { task, thresholds, policy, dt, state: FSState::default(), anomalies: 0 }
    }

    pub fn sense(&self, chain: &KinematicChain, slot: &GroundTruthSlot) -> Result<SensedFeatures> {
        let (v, v_norm) = end_effector_velocity(chain, slot)?;
        let f_norm = slot.force_norm();
        let f_dot = self.state.prev_force_norm.map_or(0.0, |p| (f_norm - p) / self.dt);
        let r_dot = self.state.prev_gripper_width.map_or(0.0, |p| (slot.width - p) / self.dt);
        Ok(SensedFeatures { v_norm, v_z: v.z, f_norm, f_dot, r_dot, gripper: slot.gripper })
    }

    pub fn select(&mut self, chain: &KinematicChain, slot: &GroundTruthSlot) -> Result<Selection> {
        let features = self.sense(chain, slot)?;
        self.state.prev_force_norm = Some(features.f_norm);
        self.state.prev_gripper_width = Some(slot.width);
        match classify(self.task, &features, &self.thresholds, self.state.twin_gripper_belief) {
            Ok((phase, fields)) => Ok(Selection {
                phase,
                message: build_message(slot, fields),
                anomaly: None,
                features,
            }),
            Err(kind) => {
                self.anomalies += 1;
                match self.policy {
                    AnomalyPolicy::Halt => Err(Error::Anomaly { slot: slot.t, kind }),
                    AnomalyPolicy::Continue => Ok(Selection {
                        phase: Phase::Pause,
                        message: SemanticMessage::empty(),
                        anomaly: Some(kind),
                        features,
                    }),
                }
            }
        }
    }

    pub fn on_ack(&mut self, acked: &SemanticMessage) {
        self.state.on_ack(acked);
    }
}

pub fn build_message(slot: &GroundTruthSlot, fields: FieldSet) -> SemanticMessage {
    SemanticMessage {
        q: fields.q.then(|| slot.q.0.clone()),
        gripper: fields.gripper.then_some(slot.gripper),
        force: fields.force.then_some(slot.force),
    }
}
