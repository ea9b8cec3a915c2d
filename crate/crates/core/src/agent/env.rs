//! One task execution: feature selection, optional agent gate, uplink, twin.
//!
//! Slot order: the twin extrapolates into the slot, the sender picks a
//! message, the gate decides, the channel delivers (or not), the twin applies
//! what arrived, and the error is measured against this slot's ground truth.
//! Slots where feature selection has nothing to send never reach the agent;
//! their costs are charged to the agent's most recent decision.

use std::collections::BTreeMap;

use serde::Serialize;

use super::dqn::{reward, DqnAgent};
use super::pid::PidLagrangianState;
use super::replay::Transition;
use crate::channel::Link;
use crate::error::{Error, Result};
use crate::features::{AnomalyKind, AnomalyPolicy, FSThresholds, FeatureSelector};
use crate::message::{FullMessage, SemanticMessage};
use crate::robot::KinematicChain;
use crate::trajectory::{Phase, Trajectory};
use crate::twin::{reconstruction_error, ErrorMode, TwinMode, TwinState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageSource {
    /// Full 44-byte message every slot.
    Full,
    /// Feature-selected message.
    Semantic,
}

pub enum Gate<'a> {
    /// Send every non-empty message.
    Always,
    /// Send nothing.
    Never,
    Agent { agent: &'a mut DqnAgent, pid: &'a PidLagrangianState, train: bool },
}

#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub chain: &'a KinematicChain,
    pub traj: &'a Trajectory,
    pub thresholds: FSThresholds,
    pub anomaly: AnomalyPolicy,
    pub twin_mode: TwinMode,
    pub error_mode: ErrorMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRecord {
    pub t: usize,
    pub true_phase: Phase,
    pub phase: Phase,
    pub payload: String,
    /// Bytes offered to the channel this slot.
    pub bytes: usize,
    pub gripper_bytes: usize,
    /// Agent decision, empty when no agent was consulted.
    pub action: Option<u8>,
    pub delivered: bool,
    pub e_q: f64,
    pub e_qdot: f64,
    pub anomaly: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub records: Vec<SlotRecord>,
    pub offered_bytes: usize,
    pub delivered_bytes: usize,
    pub transmissions: usize,
    pub deliveries: usize,
    pub decisions: usize,
    pub anomalies: usize,
    pub mean_e_q: f64,
    pub mean_e_qdot: f64,
    pub loss_mean: Option<f64>,
    pub phase_bytes: BTreeMap<Phase, usize>,
    /// Slot and kind of the anomaly that stopped the episode under `Halt`.
    pub halted: Option<(usize, AnomalyKind)>,
}

impl EpisodeLog {
    pub fn delivery_rate(&self) -> f64 {
        if self.transmissions == 0 {
            return 0.0;
        }
        self.deliveries as f64 / self.transmissions as f64
    }
}

struct Pending {
    s: Vec<f64>,
    a: u8,
    r: f64,
    c: f64,
}

pub fn run_episode(env: &Env<'_>, source: MessageSource, mut gate: Gate<'_>, link: &mut dyn Link) -> Result<EpisodeLog> {
    let chain = env.chain;
    let traj = env.traj;
    let mut fs = FeatureSelector::new(traj.task, env.thresholds, env.anomaly, traj.dt);
    let mut twin = TwinState::synced(traj.start.clone(), env.twin_mode, traj.dt);
    let mut log = EpisodeLog { records: Vec::with_capacity(traj.len()), ..Default::default() };
    let mut pending: Option<Pending> = None;
    let mut delta_c_prev = false;
    let mut sum_q = 0.0;
    let mut sum_qdot = 0.0;
    let mut losses = 0.0;
    let mut n_losses = 0usize;

    for slot in &traj.slots {
        twin.advance(chain);

        let (phase, message, anomaly) = match source {
            MessageSource::Full => {
                let full = FullMessage { q: slot.q.0.clone(), gripper: slot.gripper, force: slot.force };
                (slot.phase, full.into_semantic(), false)
            }
            MessageSource::Semantic => match fs.select(chain, slot) {
                Ok(sel) => (sel.phase, sel.message, sel.anomaly.is_some()),
                Err(Error::Anomaly { slot, kind }) => {
                    log.anomalies += 1;
                    log.halted = Some((slot, kind));
                    break;
                }
                Err(e) => return Err(e),
            },
        };

        let mut action = None;
        let mut transmit = false;
        if !message.is_empty() {
            match &mut gate {
                Gate::Always => transmit = true,
                Gate::Never => {}
                Gate::Agent { agent, train, .. } => {
                    let mut s = chain.normalize_state(&slot.q, &slot.qdot)?;
                    s.push(delta_c_prev as u8 as f64);
                    agent.prepare(&mut s);
                    if let Some(p) = pending.take() {
                        if *train {
                            let tr = Transition { s: p.s, a: p.a, r: p.r, c: p.c, s_next: s.clone(), done: false };
                            if let Some(l) = agent.observe(tr)? {
                                losses += l;
                                n_losses += 1;
                            }
                        }
                    }
                    let a = agent.act(&s, *train);
                    action = Some(a);
                    transmit = a == 1;
                    let bytes = message.byte_size();
                    pending = Some(Pending { s, a, r: reward(bytes, transmit), c: 0.0 });
                    log.decisions += 1;
                }
            }
        }

        let mut delivered = false;
        let mut bytes = 0;
        if transmit {
            bytes = message.byte_size();
            let outcome = link.transmit(bytes)?;
            delivered = outcome.delivered;
            log.transmissions += 1;
            log.offered_bytes += bytes;
            *log.phase_bytes.entry(phase).or_default() += bytes;
            if delivered {
                log.deliveries += 1;
                log.delivered_bytes += bytes;
                twin.apply_message(chain, &message, slot.t)?;
                fs.on_ack(&message);
            }
        }
        if action.is_some() {
            delta_c_prev = delivered;
        }

        let err = reconstruction_error(slot, &twin, chain, env.error_mode)?;
        sum_q += err.e_q;
        sum_qdot += err.e_qdot;
        if let (Gate::Agent { pid, .. }, Some(p)) = (&gate, pending.as_mut()) {
            p.c += pid.cost(err.e_q, err.e_qdot);
        }

        log.anomalies += anomaly as usize;
        log.records.push(SlotRecord {
            t: slot.t,
            true_phase: slot.phase,
            phase,
            payload: if transmit { message.tag() } else { SemanticMessage::empty().tag() },
            bytes,
            gripper_bytes: if transmit && message.gripper.is_some() { crate::message::GRIPPER_BYTES } else { 0 },
            action,
            delivered,
            e_q: err.e_q,
            e_qdot: err.e_qdot,
            anomaly,
        });
    }

    if let (Gate::Agent { agent, train: true, .. }, Some(p)) = (&mut gate, pending.take()) {
        let s_next = p.s.clone();
        let tr = Transition { s: p.s, a: p.a, r: p.r, c: p.c, s_next, done: true };
        if let Some(l) = agent.observe(tr)? {
            losses += l;
            n_losses += 1;
        }
    }

    let n = log.records.len().max(1) as f64;
    log.mean_e_q = sum_q / n;
    log.mean_e_qdot = sum_qdot / n;
    log.loss_mean = (n_losses > 0).then(|| losses / n_losses as f64);
    Ok(log)
}
