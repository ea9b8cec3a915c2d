//! Reconstruction messages and their byte accounting.
//!
//! Sizes follow the ROS message layout: the 7-joint angle set is 28 bytes
//! (f32 each), the 3-axis contact force 12 bytes and the gripper state 4.

use serde::{Deserialize, Serialize};

pub const Q_BYTES: usize = 28;
pub const FORCE_BYTES: usize = 12;
pub const GRIPPER_BYTES: usize = 4;
pub const FULL_MESSAGE_BYTES: usize = Q_BYTES + GRIPPER_BYTES + FORCE_BYTES;

/// Everything the physical arm can report in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullMessage {
    pub q: Vec<f64>,
    pub gripper: bool,
    pub force: [f64; 3],
}

impl FullMessage {
    pub fn byte_size(&self) -> usize {
        FULL_MESSAGE_BYTES
    }

    pub fn into_semantic(self) -> SemanticMessage {
        SemanticMessage {
            q: Some(self.q),
            gripper: Some(self.gripper),
            force: Some(self.force),
        }
    }
}

/// Field subset chosen by feature selection. An all-`None` message is the
/// dropped (empty) message and is never offered to the channel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticMessage {
    pub q: Option<Vec<f64>>,
    pub gripper: Option<bool>,
    pub force: Option<[f64; 3]>,
}

/// Which fields are present, independent of their values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldSet {
    pub q: bool,
    pub gripper: bool,
    pub force: bool,
}

impl FieldSet {
    pub const EMPTY: FieldSet = FieldSet { q: false, gripper: false, force: false };
    pub const Q: FieldSet = FieldSet { q: true, gripper: false, force: false };
    pub const Q_FORCE: FieldSet = FieldSet { q: true, gripper: false, force: true };
    pub const Q_GRIPPER: FieldSet = FieldSet { q: true, gripper: true, force: false };
    pub const GRIPPER: FieldSet = FieldSet { q: false, gripper: true, force: false };
    pub const GRIPPER_FORCE: FieldSet = FieldSet { q: false, gripper: true, force: true };
    pub const FULL: FieldSet = FieldSet { q: true, gripper: true, force: true };

    /// Subsets feature selection may emit.
    pub const LEGAL: [FieldSet; 6] = [
        Self::EMPTY,
        Self::Q,
        Self::Q_FORCE,
        Self::Q_GRIPPER,
        Self::GRIPPER,
        Self::GRIPPER_FORCE,
    ];

    pub fn byte_size(self) -> usize {
        Q_BYTES * self.q as usize + GRIPPER_BYTES * self.gripper as usize + FORCE_BYTES * self.force as usize
    }

    pub fn is_legal_semantic(self) -> bool {
        Self::LEGAL.contains(&self)
    }
}

impl SemanticMessage {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn fields(&self) -> FieldSet {
        FieldSet {
            q: self.q.is_some(),
            gripper: self.gripper.is_some(),
            force: self.force.is_some(),
        }
    }

    pub fn byte_size(&self) -> usize {
        self.fields().byte_size()
    }

    pub fn is_empty(&self) -> bool {
        self.fields() == FieldSet::EMPTY
    }

    /// Short field tag used in logs, e.g. `q+f`, `g`, `-`.
    pub fn tag(&self) -> String {
        let f = self.fields();
        let mut parts = Vec::new();
        if f.q {
            parts.push("q");
        }
        if f.gripper {
            parts.push("g");
        }
        if f.force {
            parts.push("f");
        }
        if parts.is_empty() {
            "-".to_string()
        } else {
            parts.join("+")
        }
    }
}
