//! Scripted ground-truth trajectories for the three manipulation tasks.
//!
//! A script is a start configuration plus an ordered list of phase-labelled
//! segments. Segments with a `target` move there along a joint-space quintic
//! with zero boundary velocity and acceleration; segments without one hold
//! the current configuration. Gripper, width and force profiles are derived
//! from the phase layout.
//!
//! Slot `t` samples the continuous trajectory at time `(t + 1) * dt`; the
//! start configuration sits at time 0. The slot velocity is the one-slot
//! backward difference of sampled angles, i.e. what the arm's encoders would
//! report at 1 kHz. The continuous interpolant keeps its analytic derivative
//! through [`Trajectory::q_at`] / [`Trajectory::qdot_at`].

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robot::{JointVector, JointVelVector, KinematicChain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Reach,
    Grasp,
    Transport,
    PreRelease,
    Release,
    Pause,
    PreToss,
    Toss,
    PushPull,
}

impl Phase {
    pub const ALL: [Phase; 9] = [
        Phase::Reach,
        Phase::Grasp,
        Phase::Transport,
        Phase::PreRelease,
        Phase::Release,
        Phase::Pause,
        Phase::PreToss,
        Phase::Toss,
        Phase::PushPull,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Reach => "reach",
            Phase::Grasp => "grasp",
            Phase::Transport => "transport",
            Phase::PreRelease => "pre_release",
            Phase::Release => "release",
            Phase::Pause => "pause",
            Phase::PreToss => "pre_toss",
            Phase::Toss => "toss",
            Phase::PushPull => "push_pull",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PickPlace,
    PickToss,
    PushPull,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::PickPlace, TaskKind::PickToss, TaskKind::PushPull];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::PickPlace => "pick_place",
            TaskKind::PickToss => "pick_toss",
            TaskKind::PushPull => "push_pull",
        }
    }

    /// Phases that may follow `prev` (`None` = script start).
    fn allowed_after(self, prev: Option<Phase>) -> &'static [Phase] {
        use Phase::*;
        match (self, prev) {
            (_, None) | (_, Some(Pause)) => &[Reach, Pause],
            (_, Some(Reach)) => &[Reach, Grasp, Pause],
            (TaskKind::PickPlace, Some(Grasp)) => &[Transport],
            (TaskKind::PickPlace, Some(Transport)) => &[Transport, PreRelease],
            (TaskKind::PushPull, Some(Grasp)) => &[PushPull],
            (TaskKind::PushPull, Some(PushPull)) => &[PushPull, PreRelease],
            (TaskKind::PickPlace | TaskKind::PushPull, Some(PreRelease)) => &[Release],
            (TaskKind::PickPlace | TaskKind::PushPull, Some(Release)) => &[Pause],
            (TaskKind::PickToss, Some(Grasp)) => &[PreToss],
            (TaskKind::PickToss, Some(PreToss)) => &[PreToss, Toss],
            (TaskKind::PickToss, Some(Toss)) => &[Pause],
            _ => &[],
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pick_place" => Ok(TaskKind::PickPlace),
            "pick_toss" => Ok(TaskKind::PickToss),
            "push_pull" => Ok(TaskKind::PushPull),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub phase: Phase,
    pub duration_ms: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
    /// Toss only: offset inside the segment at which the gripper opens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release_at_ms: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceProfile {
    pub hold_n: f64,
    #[serde(default = "ForceProfile::default_direction")]
    pub direction: [f64; 3],
    pub rise_ms: usize,
    pub drop_ms: usize,
    pub noise_sigma: f64,
    /// Largest per-second change the held-force noise may make.
    pub noise_max_rate: f64,
}

impl ForceProfile {
    fn default_direction() -> [f64; 3] {
        [0.0, 1.0, 0.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperProfile {
    pub open_width: f64,
    pub object_width: f64,
    pub close_ms: usize,
    pub open_ms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScript {
    pub task: TaskKind,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub start: Vec<f64>,
    pub segments: Vec<Segment>,
    pub force: ForceProfile,
    pub gripper: GripperProfile,
}

fn default_dt() -> f64 {
    crate::DEFAULT_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSlot {
    pub t: usize,
    pub q: JointVector,
    pub qdot: JointVelVector,
    /// `true` = closed.
    pub gripper: bool,
    pub width: f64,
    pub force: [f64; 3],
    pub phase: Phase,
}

impl GroundTruthSlot {
    pub fn force_norm(&self) -> f64 {
        Vector3::from(self.force).norm()
    }
}

/// One quintic (or hold) piece of the continuous trajectory.
#[derive(Debug, Clone)]
struct Piece {
    start_slot: usize,
    n_slots: usize,
    q0: Vec<f64>,
    dq: Vec<f64>,
}

impl Piece {
    fn duration(&self, dt: f64) -> f64 {
        self.n_slots as f64 * dt
    }
}

/// Normalized quintic blend with zero end velocity and acceleration.
pub fn quintic(s: f64) -> (f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    let pos = s3 * (10.0 - 15.0 * s + 6.0 * s2);
    let vel = 30.0 * s2 * (1.0 - s) * (1.0 - s);
    let acc = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
    (pos, vel, acc)
}

/// Peak of `quintic` velocity: 30 * (1/2)^2 * (1/2)^2.
pub const QUINTIC_PEAK_VELOCITY: f64 = 1.875;

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub task: TaskKind,
    pub dt: f64,
    pub start: JointVector,
    pub slots: Vec<GroundTruthSlot>,
    pieces: Vec<Piece>,
    plan: Vec<(Phase, usize)>,
}

impl TaskScript {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn total_ms(&self) -> usize {
        self.segments.iter().map(|s| s.duration_ms).sum()
    }

    fn slots_per_ms(&self) -> Result<usize> {
        let k = (1e-3 / self.dt).round();
        if !(self.dt > 0.0) || k < 1.0 || (k * self.dt - 1e-3).abs() > 1e-12 {
            return Err(Error::InvalidScript(format!("dt {} must divide 1 ms", self.dt)));
        }
        Ok(k as usize)
    }

    /// Phase and slot count of every segment, in order.
    pub fn phase_plan(&self) -> Result<Vec<(Phase, usize)>> {
        let k = self.slots_per_ms()?;
        Ok(self.segments.iter().map(|s| (s.phase, s.duration_ms * k)).collect())
    }

    pub fn validate(&self, chain: &KinematicChain) -> Result<()> {
        let k = self.slots_per_ms()?;
        let n = chain.n_joints();
        if self.start.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.start.len() });
        }
        if self.segments.is_empty() {
            return Err(Error::InvalidScript("no segments".into()));
        }
        let check_in_limits = |idx: usize, q: &[f64]| -> Result<()> {
            if q.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: q.len() });
            }
            for (j, (p, v)) in chain.joints().iter().zip(q).enumerate() {
                if !(p.q_min..=p.q_max).contains(v) {
                    return Err(Error::WaypointOutOfLimits { waypoint: idx, joint: j, value: *v });
                }
            }
            Ok(())
        };
        check_in_limits(0, &self.start)?;

        let mut prev: Option<Phase> = None;
        let mut q = self.start.clone();
        let mut slot = 0usize;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.duration_ms == 0 {
                return Err(Error::InvalidScript(format!("segment {i} has zero duration")));
            }
            if !self.task.allowed_after(prev).contains(&seg.phase) {
                return Err(Error::InvalidScript(format!(
                    "phase {} may not follow {} in {}",
                    seg.phase,
                    prev.map_or("start", Phase::as_str),
                    self.task
                )));
            }
            if let Some(at) = seg.release_at_ms {
                if seg.phase != Phase::Toss || at >= seg.duration_ms {
                    return Err(Error::InvalidScript(format!("segment {i}: release_at_ms only valid inside a toss")));
                }
            }
            if seg.phase == Phase::Toss && seg.release_at_ms.is_none() {
                return Err(Error::InvalidScript(format!("toss segment {i} needs release_at_ms")));
            }
            let n_slots = seg.duration_ms * k;
            if let Some(target) = &seg.target {
                check_in_limits(i + 1, target)?;
                let t = n_slots as f64 * self.dt;
                for (j, p) in chain.joints().iter().enumerate() {
                    let peak = QUINTIC_PEAK_VELOCITY * (target[j] - q[j]) / t;
                    if peak > p.qdot_max || peak < p.qdot_min {
                        return Err(Error::VelocityLimitExceeded {
                            segment: i,
                            joint: j,
                            slot: slot + n_slots / 2,
                            peak: peak.abs(),
                        });
                    }
                }
                q = target.clone();
            }
            slot += n_slots;
            prev = Some(seg.phase);
        }

        let f = &self.force;
        let dir_norm = Vector3::from(f.direction).norm();
        let finite = [f.hold_n, f.noise_sigma, f.noise_max_rate, dir_norm].iter().all(|v| v.is_finite());
        if !finite || f.hold_n < 0.0 || f.noise_sigma < 0.0 || f.noise_max_rate < 0.0 || dir_norm == 0.0 {
            return Err(Error::InvalidScript("bad force profile".into()));
        }
        if f.rise_ms == 0 || f.drop_ms == 0 || self.gripper.close_ms == 0 || self.gripper.open_ms == 0 {
            return Err(Error::InvalidScript("ramp durations must be positive".into()));
        }
        if !(self.gripper.open_width > self.gripper.object_width && self.gripper.object_width >= 0.0) {
            return Err(Error::InvalidScript("gripper open width must exceed object width".into()));
        }
        Ok(())
    }

    /// Largest per-slot force-norm change the held-force noise can produce, in N/s.
    pub fn max_noise_rate(&self) -> f64 {
        self.force.noise_max_rate
    }

    pub fn generate(&self, chain: &KinematicChain, seed: u64) -> Result<Trajectory> {
        self.validate(chain)?;
        let k = self.slots_per_ms()?;
        let n = chain.n_joints();
        let dt = self.dt;

        let mut pieces = Vec::with_capacity(self.segments.len());
        let mut plan = Vec::with_capacity(self.segments.len());
        let mut q = self.start.clone();
        let mut slot = 0usize;
        for seg in &self.segments {
            let n_slots = seg.duration_ms * k;
            let dq = match &seg.target {
                Some(t) => t.iter().zip(&q).map(|(a, b)| a - b).collect(),
                None => vec![0.0; n],
            };
            pieces.push(Piece { start_slot: slot, n_slots, q0: q.clone(), dq });
            plan.push((seg.phase, n_slots));
            if let Some(t) = &seg.target {
                q = t.clone();
            }
            slot += n_slots;
        }
        let total = slot;

        let events = self.events(k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, self.force.noise_sigma.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::InvalidScript(e.to_string()))?;
        let dir = Vector3::from(self.force.direction).normalize();
        let step_cap = self.force.noise_max_rate * dt;
        let mut noise = 0.0_f64;

        let mut slots = Vec::with_capacity(total);
        let mut prev_q = self.start.clone();
        for (pi, piece) in pieces.iter().enumerate() {
            let phase = plan[pi].0;
            for local in 0..piece.n_slots {
                let t = piece.start_slot + local;
                let s = (local + 1) as f64 / piece.n_slots as f64;
                let blend = if local + 1 == piece.n_slots { 1.0 } else { quintic(s).0 };
                let q_t: Vec<f64> = piece.q0.iter().zip(&piece.dq).map(|(a, d)| a + d * blend).collect();
                let qdot_t: Vec<f64> = q_t.iter().zip(&prev_q).map(|(a, b)| (a - b) / dt).collect();

                let held = events.holding(t);
                let mut magnitude = self.force.hold_n * events.force_factor(t);
                if held {
                    let z = if self.force.noise_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                    noise += (z - noise).clamp(-step_cap, step_cap);
                    magnitude += noise;
                } else {
                    noise = 0.0;
                }
                let f = dir * magnitude;
                slots.push(GroundTruthSlot {
                    t,
                    q: JointVector(q_t.clone()),
                    qdot: JointVelVector(qdot_t),
                    gripper: events.closed(t),
                    width: events.width(t, &self.gripper),
                    force: [f.x, f.y, f.z],
                    phase,
                });
                prev_q = q_t;
            }
        }

        Ok(Trajectory {
            task: self.task,
            dt,
            start: JointVector(self.start.clone()),
            slots,
            pieces,
            plan,
        })
    }

    fn events(&self, k: usize) -> Result<Events> {
        let mut slot = 0usize;
        let mut close = None;
        let mut open = None;
        let mut drop_end = None;
        for seg in &self.segments {
            let n_slots = seg.duration_ms * k;
            match seg.phase {
                Phase::Grasp if close.is_none() => close = Some(slot),
                Phase::PreRelease if open.is_none() => open = Some(slot),
                Phase::Release if drop_end.is_none() => drop_end = Some(slot),
                Phase::Toss if open.is_none() => {
                    let at = slot + seg.release_at_ms.unwrap_or(0) * k;
                    open = Some(at);
                    drop_end = Some(at + self.force.drop_ms * k);
                }
                _ => {}
            }
            slot += n_slots;
        }
        let ev = Events {
            close,
            open,
            drop_end,
            rise: self.force.rise_ms * k,
            drop: self.force.drop_ms * k,
            close_len: self.gripper.close_ms * k,
            open_len: self.gripper.open_ms * k,
            width_open_start: drop_end,
        };
        if let (Some(c), Some(d)) = (ev.close, ev.drop_end) {
            if c + ev.rise + ev.drop > d {
                return Err(Error::InvalidScript("force ramp overlaps release".into()));
            }
        }
        if ev.close.is_some() != ev.drop_end.is_some() {
            return Err(Error::InvalidScript("a grasp must be paired with a release".into()));
        }
        Ok(ev)
    }
}

/// Gripper and contact timing in slot units.
struct Events {
    close: Option<usize>,
    open: Option<usize>,
    drop_end: Option<usize>,
    rise: usize,
    drop: usize,
    close_len: usize,
    open_len: usize,
    width_open_start: Option<usize>,
}

impl Events {
    fn closed(&self, t: usize) -> bool {
        match (self.close, self.open) {
            (Some(c), Some(o)) => t >= c && t < o,
            (Some(c), None) => t >= c,
            _ => false,
        }
    }

    /// Force magnitude as a fraction of the hold force.
    fn force_factor(&self, t: usize) -> f64 {
        let (Some(c), Some(d)) = (self.close, self.drop_end) else {
            return 0.0;
        };
        if t < c || t >= d {
            return 0.0;
        }
        let rise = smoothstep((t - c + 1) as f64 / self.rise as f64);
        let fall = ((d - t) as f64 / self.drop as f64).min(1.0);
        rise.min(fall)
    }

    fn holding(&self, t: usize) -> bool {
        match (self.close, self.drop_end) {
            (Some(c), Some(d)) => t + 1 >= c + self.rise && t + self.drop < d,
            _ => false,
        }
    }

    fn width(&self, t: usize, g: &GripperProfile) -> f64 {
        let span = g.open_width - g.object_width;
        let Some(c) = self.close else {
            return g.open_width;
        };
        if t < c {
            return g.open_width;
        }
        let closing = smoothstep((t - c + 1) as f64 / self.close_len as f64);
        let opening = match self.width_open_start {
            Some(o) if t >= o => smoothstep((t - o + 1) as f64 / self.open_len as f64),
            _ => 0.0,
        };
        g.open_width - span * closing + span * opening
    }
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn n_joints(&self) -> usize {
        self.start.len()
    }

    pub fn phase_plan(&self) -> &[(Phase, usize)] {
        &self.plan
    }

    /// First slot of every segment.
    pub fn boundaries(&self) -> Vec<usize> {
        self.pieces.iter().map(|p| p.start_slot).collect()
    }

    fn piece_at(&self, tau: f64) -> (&Piece, f64) {
        let slot_f = tau / self.dt;
        let idx = self
            .pieces
            .iter()
            .rposition(|p| (p.start_slot as f64) <= slot_f)
            .unwrap_or(0);
        let p = &self.pieces[idx];
        let local = (tau - p.start_slot as f64 * self.dt).clamp(0.0, p.duration(self.dt));
        (p, local)
    }

    /// Continuous joint angles at time `tau` seconds.
    pub fn q_at(&self, tau: f64) -> Vec<f64> {
        let (p, local) = self.piece_at(tau);
        let s = local / p.duration(self.dt);
        let b = quintic(s).0;
        p.q0.iter().zip(&p.dq).map(|(a, d)| a + d * b).collect()
    }

    /// Analytic joint velocity at time `tau` seconds.
    pub fn qdot_at(&self, tau: f64) -> Vec<f64> {
        let (p, local) = self.piece_at(tau);
        let td = p.duration(self.dt);
        let v = quintic(local / td).1;
        p.dq.iter().map(|d| d * v / td).collect()
    }

    /// Analytic joint acceleration at time `tau` seconds.
    pub fn qddot_at(&self, tau: f64) -> Vec<f64> {
        let (p, local) = self.piece_at(tau);
        let td = p.duration(self.dt);
        let a = quintic(local / td).2;
        p.dq.iter().map(|d| d * a / (td * td)).collect()
    }

    /// Time of slot `t` on the continuous trajectory.
    pub fn slot_time(&self, t: usize) -> f64 {
        (t + 1) as f64 * self.dt
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.n_joints();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("q{i}")));
        header.extend((1..=n).map(|i| format!("qd{i}")));
        header.extend(["gripper", "width", "fx", "fy", "fz", "phase"].map(String::from));
        wr.write_record(&header)?;
        for s in &self.slots {
            let mut row = vec![s.t.to_string()];
            row.extend(s.q.iter().map(|v| format!("{v:.9}")));
            row.extend(s.qdot.iter().map(|v| format!("{v:.9}")));
            row.push((s.gripper as u8).to_string());
            row.push(format!("{:.9}", s.width));
            row.extend(s.force.iter().map(|v| format!("{v:.9}")));
            row.push(s.phase.to_string());
            wr.write_record(&row)?;
        }
        wr.flush().map_err(|e| Error::io(Path::new("<trajectory csv>"), e))?;
        Ok(())
    }
}

/// Cartesian end-effector velocity of a slot and its norm.
pub fn end_effector_velocity(chain: &KinematicChain, slot: &GroundTruthSlot) -> Result<(Vector3<f64>, f64)> {
    let v = chain.end_effector_velocity(&slot.q, &slot.qdot)?;
    Ok((v, v.norm()))
}
