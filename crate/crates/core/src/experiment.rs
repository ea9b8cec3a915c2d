//! Experiment orchestration: configuration, the four transmission schemes,
//! constraint derivation, training, evaluation and reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::env::{run_episode, Env, EpisodeLog, Gate, MessageSource};
use crate::agent::{DqnAgent, DqnConfig, InputScaler, Mlp, PidGains, PidLagrangianState, RmsProp};
use crate::channel::{ChannelParams, Link, PerfectLink, UplinkChannel};
use crate::error::{Error, Result};
use crate::features::{AnomalyPolicy, FSThresholds};
use crate::robot::KinematicChain;
use crate::trajectory::{Phase, TaskKind, TaskScript, Trajectory};
use crate::twin::{ErrorMode, TwinMode};

const PICK_PLACE_SCRIPT: &str = include_str!("../../../configs/pick_place.json");
const PICK_TOSS_SCRIPT: &str = include_str!("../../../configs/pick_toss.json");
const PUSH_PULL_SCRIPT: &str = include_str!("../../../configs/push_pull.json");

/// Channel streams at or above this index are reserved for evaluation, so
/// evaluation never replays a training episode's fading sequence.
pub const EVAL_STREAM_BASE: u64 = 1 << 32;

pub fn default_script(task: TaskKind) -> TaskScript {
    let text = match task {
        TaskKind::PickPlace => PICK_PLACE_SCRIPT,
        TaskKind::PickToss => PICK_TOSS_SCRIPT,
        TaskKind::PushPull => PUSH_PULL_SCRIPT,
    };
    TaskScript::from_json(text).expect("bundled script parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Wired,
    Wireless,
    Fs,
    FsPpdqn,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::Wired => "Wired",
            Scheme::Wireless => "Wireless",
            Scheme::Fs => "FS",
            Scheme::FsPpdqn => "FS&PPDQN",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wired" => Ok(Scheme::Wired),
            "wireless" => Ok(Scheme::Wireless),
            "fs" => Ok(Scheme::Fs),
            "fs_ppdqn" | "fs&ppdqn" | "ppdqn" => Ok(Scheme::FsPpdqn),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum ConstraintCase {
    Sc,
    Rc,
    Custom { c_q: f64, c_qdot: f64 },
}

impl ConstraintCase {
    pub fn label(&self) -> &'static str {
        match self {
            ConstraintCase::Sc => "SC",
            ConstraintCase::Rc => "RC",
            ConstraintCase::Custom { .. } => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub c_q: f64,
    pub c_qdot: f64,
}

/// Angle / velocity allowances over the wireless baseline, normalized units.
pub const SC_SLACK: (f64, f64) = (2e-5, 5e-5);
pub const RC_SLACK: (f64, f64) = (2e-4, 5e-4);

pub fn derive_constraints(baseline: Option<&RunSummary>, case: ConstraintCase) -> Result<Constraints> {
    let slack = match case {
        ConstraintCase::Custom { c_q, c_qdot } => return Ok(Constraints { c_q, c_qdot }),
        ConstraintCase::Sc => SC_SLACK,
        ConstraintCase::Rc => RC_SLACK,
    };
    let b = baseline.ok_or_else(|| Error::Config("constraint derivation needs a wireless baseline".into()))?;
    Ok(Constraints { c_q: b.mean_e_q + slack.0, c_qdot: b.mean_e_qdot + slack.1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibrate {
    Omega,
    Beta,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    /// Base parameters; the published set when absent.
    pub params: Option<ChannelParams>,
    pub calibrate: Calibrate,
    pub target_delivery: f64,
    /// Use the published parameters verbatim, no calibration.
    pub paper_params: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            params: None,
            calibrate: Calibrate::Omega,
            target_delivery: ChannelParams::DEFAULT_TARGET_DELIVERY,
            paper_params: false,
        }
    }
}

impl ChannelConfig {
    pub fn resolve(&self) -> Result<ChannelParams> {
        if self.paper_params {
            return Ok(ChannelParams::PAPER);
        }
        let base = self.params.unwrap_or(ChannelParams::PAPER);
        match self.calibrate {
            Calibrate::Omega => base.calibrate_omega(self.target_delivery),
            Calibrate::Beta => base.calibrate_beta(self.target_delivery),
            Calibrate::None => {
                base.validate()?;
                Ok(base)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidConfig {
    pub gains: PidGains,
    /// Feed the controller `(ē - C) / C` instead of `ē - C`.
    pub relative: bool,
    /// Multiplier units: with `relative`, λ is expressed per unit of `C`
    /// times this factor.
    pub scale: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self { gains: PidGains::default(), relative: true, scale: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub trajectory: u64,
    pub channel: u64,
    pub agent: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { trajectory: 1, channel: 2, agent: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    /// Kinematic chain file; the bundled FR3 table when absent.
    pub chain: Option<PathBuf>,
    /// Task script file; the bundled default for `task` when absent.
    pub script: Option<PathBuf>,
    pub thresholds: FSThresholds,
    pub anomaly: AnomalyPolicy,
    pub channel: ChannelConfig,
    pub twin_mode: TwinMode,
    pub error_mode: ErrorMode,
    pub constraint: ConstraintCase,
    pub dqn: DqnConfig,
    pub pid: PidConfig,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    pub seeds: Seeds,
    /// Restrict `baseline` / `eval` to one scheme.
    pub scheme: Option<Scheme>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::PickPlace,
            chain: None,
            script: None,
            thresholds: FSThresholds::default(),
            anomaly: AnomalyPolicy::Halt,
            channel: ChannelConfig::default(),
            twin_mode: TwinMode::Extrapolate,
            error_mode: ErrorMode::Absolute,
            constraint: ConstraintCase::Sc,
            dqn: DqnConfig::default(),
            pid: PidConfig::default(),
            train_episodes: 1000,
            eval_episodes: 20,
            seeds: Seeds::default(),
            scheme: None,
            checkpoint: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        Ok(cfg)
    }

    /// Load a config file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.chain, &mut cfg.script, &mut cfg.checkpoint].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.dqn.validate()?;
        self.pid.gains.validate()?;
        if !(self.pid.scale.is_finite() && self.pid.scale > 0.0) {
            return Err(Error::Config("pid.scale must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be at least 1".into()));
        }
        for p in [&self.chain, &self.script, &self.checkpoint].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if let ConstraintCase::Custom { c_q, c_qdot } = self.constraint {
            if !(c_q > 0.0 && c_qdot > 0.0) {
                return Err(Error::Config("custom constraints must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Per-scheme aggregate over evaluation episodes. Loads are per-episode means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheme: String,
    pub task: TaskKind,
    pub episodes: usize,
    /// `None` for the wired link, where load is not meaningful.
    pub cumulative_load: Option<f64>,
    pub delivered_load: Option<f64>,
    pub mean_e_q: f64,
    pub mean_e_qdot: f64,
    pub delivery_rate: f64,
    pub phase_bytes: BTreeMap<Phase, f64>,
}

impl RunSummary {
    pub fn from_logs(scheme: &str, task: TaskKind, logs: &[EpisodeLog], wired: bool) -> Self {
        let n = logs.len().max(1) as f64;
        let mean = |f: &dyn Fn(&EpisodeLog) -> f64| logs.iter().map(f).sum::<f64>() / n;
        let mut phase_bytes = BTreeMap::new();
        for log in logs {
            for (p, b) in &log.phase_bytes {
                *phase_bytes.entry(*p).or_insert(0.0) += *b as f64 / n;
            }
        }
        let tx: usize = logs.iter().map(|l| l.transmissions).sum();
        let rx: usize = logs.iter().map(|l| l.deliveries).sum();
        Self {
            scheme: scheme.to_string(),
            task,
            episodes: logs.len(),
            cumulative_load: (!wired).then(|| mean(&|l| l.offered_bytes as f64)),
            delivered_load: (!wired).then(|| mean(&|l| l.delivered_bytes as f64)),
            mean_e_q: mean(&|l| l.mean_e_q),
            mean_e_qdot: mean(&|l| l.mean_e_qdot),
            delivery_rate: if tx == 0 { 0.0 } else { rx as f64 / tx as f64 },
            phase_bytes,
        }
    }
}

/// Loaded chain, script and trajectory plus resolved channel parameters.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub chain: KinematicChain,
    pub script: TaskScript,
    pub traj: Trajectory,
    pub channel: ChannelParams,
}

/// Channel for one episode: seeded ChaCha with the episode as stream.
pub fn episode_channel(params: ChannelParams, seed: u64, stream: u64) -> Result<UplinkChannel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    UplinkChannel::with_rng(params, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub cumulative_load: usize,
    pub mean_e_q: f64,
    pub mean_e_qdot: f64,
    pub lambda_q: f64,
    pub lambda_qdot: f64,
    pub loss_mean: Option<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct Training {
    pub agent: DqnAgent,
    pub pid: PidLagrangianState,
    pub constraints: Constraints,
    pub case: ConstraintCase,
    pub rows: Vec<EpisodeRow>,
    pub last_log: EpisodeLog,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let chain = match &cfg.chain {
            Some(p) => KinematicChain::load(p)?,
            None => KinematicChain::fr3(),
        };
        let script = match &cfg.script {
            Some(p) => TaskScript::load(p)?,
            None => default_script(cfg.task),
        };
        if script.task != cfg.task {
            return Err(Error::Config(format!("script is for {} but task is {}", script.task, cfg.task)));
        }
        let traj = script.generate(&chain, cfg.seeds.trajectory)?;
        let channel = cfg.channel.resolve()?;
        Ok(Self { cfg, chain, script, traj, channel })
    }

    pub fn env(&self, anomaly: AnomalyPolicy) -> Env<'_> {
        Env {
            chain: &self.chain,
            traj: &self.traj,
            thresholds: self.cfg.thresholds,
            anomaly,
            twin_mode: self.cfg.twin_mode,
            error_mode: self.cfg.error_mode,
        }
    }

    fn link(&self, scheme: Scheme, stream: u64) -> Result<Box<dyn Link>> {
        Ok(match scheme {
            Scheme::Wired => Box::new(PerfectLink),
            _ => Box::new(episode_channel(self.channel, self.cfg.seeds.channel, stream)?),
        })
    }

    /// Evaluation episodes of one scheme. `agent` is required for FS&PPDQN.
    pub fn run_scheme(&self, scheme: Scheme, agent: Option<&mut DqnAgent>) -> Result<Vec<EpisodeLog>> {
        let episodes = if scheme == Scheme::Wired { 1 } else { self.cfg.eval_episodes };
        let source = match scheme {
            Scheme::Wired | Scheme::Wireless => MessageSource::Full,
            _ => MessageSource::Semantic,
        };
        let anomaly = if scheme == Scheme::FsPpdqn { AnomalyPolicy::Continue } else { self.cfg.anomaly };
        let env = self.env(anomaly);
        let pid = PidLagrangianState::new(PidGains::default(), 1.0, 1.0)?;
        let mut agent = agent;
        if scheme == Scheme::FsPpdqn && agent.is_none() {
            return Err(Error::Config("FS&PPDQN needs a trained checkpoint".into()));
        }
        let mut logs = Vec::with_capacity(episodes);
        for e in 0..episodes {
            let mut link = self.link(scheme, EVAL_STREAM_BASE + e as u64)?;
            let gate = match (scheme, agent.as_deref_mut()) {
                (Scheme::FsPpdqn, Some(a)) => Gate::Agent { agent: a, pid: &pid, train: false },
                _ => Gate::Always,
            };
            logs.push(run_episode(&env, source, gate, link.as_mut())?);
        }
        Ok(logs)
    }

    pub fn summarize(&self, scheme: Scheme, label: Option<&str>, logs: &[EpisodeLog]) -> RunSummary {
        RunSummary::from_logs(label.unwrap_or(scheme.label()), self.cfg.task, logs, scheme == Scheme::Wired)
    }

    pub fn wireless_baseline(&self) -> Result<RunSummary> {
        let logs = self.run_scheme(Scheme::Wireless, None)?;
        Ok(self.summarize(Scheme::Wireless, None, &logs))
    }

    /// States the agent will decide on, from a lossless FS run. Each slot
    /// appears with both values of the delivery flag.
    pub fn decision_states(&self) -> Result<Vec<Vec<f64>>> {
        let env = self.env(AnomalyPolicy::Continue);
        let log = run_episode(&env, MessageSource::Semantic, Gate::Always, &mut PerfectLink)?;
        let mut states = Vec::with_capacity(2 * log.transmissions);
        for r in log.records.iter().filter(|r| r.bytes > 0) {
            let slot = &self.traj.slots[r.t];
            let s = self.chain.normalize_state(&slot.q, &slot.qdot)?;
            for flag in [0.0, 1.0] {
                let mut x = s.clone();
                x.push(flag);
                states.push(x);
            }
        }
        Ok(states)
    }

    pub fn pid_state(&self, c: &Constraints) -> Result<PidLagrangianState> {
        let pc = &self.cfg.pid;
        let (sq, sv) = if pc.relative { (pc.scale / c.c_q, pc.scale / c.c_qdot) } else { (pc.scale, pc.scale) };
        PidLagrangianState::new(pc.gains, sq, sv)
    }

    /// Train the gate under `case`, calling `progress` after each episode.
    pub fn train(
        &self,
        case: ConstraintCase,
        baseline: Option<&RunSummary>,
        mut progress: impl FnMut(&EpisodeRow),
    ) -> Result<Training> {
        let constraints = derive_constraints(baseline, case)?;
        let episodes = self.cfg.train_episodes;
        let states = self.decision_states()?;
        let decay = (self.cfg.dqn.eps_decay_fraction * (episodes * states.len() / 2) as f64).ceil() as u64;
        let state_dim = 2 * self.chain.n_joints() + 1;
        let mut agent = DqnAgent::new(self.cfg.dqn.clone(), state_dim, decay, self.cfg.seeds.agent)?;
        if self.cfg.dqn.standardize_inputs {
            agent.input = Some(InputScaler::fit(&states)?);
        }
        let mut pid = self.pid_state(&constraints)?;
        let env = self.env(AnomalyPolicy::Continue);
        let mut rows = Vec::with_capacity(episodes);
        let mut last_log = EpisodeLog::default();
        for ep in 0..episodes {
            let mut link = self.link(Scheme::FsPpdqn, ep as u64)?;
            let (lq, lv) = pid.lambdas();
            let log = run_episode(
                &env,
                MessageSource::Semantic,
                Gate::Agent { agent: &mut agent, pid: &pid, train: true },
                link.as_mut(),
            )?;
            if ep + 1 < episodes {
                pid.update(log.mean_e_q, log.mean_e_qdot, constraints.c_q, constraints.c_qdot);
            }
            let row = EpisodeRow {
                episode: ep,
                cumulative_load: log.offered_bytes,
                mean_e_q: log.mean_e_q,
                mean_e_qdot: log.mean_e_qdot,
                lambda_q: lq,
                lambda_qdot: lv,
                loss_mean: log.loss_mean,
                epsilon: agent.epsilon(),
            };
            progress(&row);
            rows.push(row);
            last_log = log;
        }
        Ok(Training { agent, pid, constraints, case, rows, last_log })
    }
}

/// Per-slot trace; each entry is `(scheme label, episode index, log)`.
pub fn write_slots_csv<W: Write>(w: W, logs: &[(String, usize, &EpisodeLog)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "scheme", "episode", "t", "true_phase", "phase", "payload", "bytes", "gripper_bytes", "action", "delivered", "e_q",
        "e_qdot", "anomaly",
    ])?;
    for (scheme, episode, log) in logs {
        for r in &log.records {
            wr.write_record([
                scheme.clone(),
                episode.to_string(),
                r.t.to_string(),
                r.true_phase.to_string(),
                r.phase.to_string(),
                r.payload.clone(),
                r.bytes.to_string(),
                r.gripper_bytes.to_string(),
                r.action.map_or(String::new(), |a| a.to_string()),
                (r.delivered as u8).to_string(),
                format!("{:.9e}", r.e_q),
                format!("{:.9e}", r.e_qdot),
                (r.anomaly as u8).to_string(),
            ])?;
        }
    }
    wr.flush().map_err(|e| Error::io(Path::new("slots.csv"), e))?;
    Ok(())
}

pub fn write_episodes_csv<W: Write>(w: W, rows: &[EpisodeRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["episode", "cumulative_load", "mean_e_q", "mean_e_qdot", "lambda_q", "lambda_qdot", "loss_mean", "epsilon"])?;
    for r in rows {
        wr.write_record([
            r.episode.to_string(),
            r.cumulative_load.to_string(),
            format!("{:.9e}", r.mean_e_q),
            format!("{:.9e}", r.mean_e_qdot),
            format!("{:.9e}", r.lambda_q),
            format!("{:.9e}", r.lambda_qdot),
            r.loss_mean.map_or(String::new(), |l| format!("{l:.9e}")),
            format!("{:.6}", r.epsilon),
        ])?;
    }
    wr.flush().map_err(|e| Error::io(Path::new("episodes.csv"), e))?;
    Ok(())
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub summary: RunSummary,
    /// `1 - load / load_wireless`, when both loads exist.
    pub reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub task: TaskKind,
    pub rows: Vec<ReportRow>,
}

pub fn report(summaries: &[RunSummary]) -> Result<Report> {
    let first = summaries.first().ok_or_else(|| Error::Config("nothing to report".into()))?;
    if let Some(other) = summaries.iter().find(|s| s.task != first.task) {
        return Err(Error::Config(format!("mixed tasks in one report: {} and {}", first.task, other.task)));
    }
    let wireless = summaries.iter().find(|s| s.scheme == Scheme::Wireless.label()).and_then(|s| s.cumulative_load);
    let rows = summaries
        .iter()
        .map(|s| ReportRow {
            summary: s.clone(),
            reduction: match (s.cumulative_load, wireless) {
                (Some(l), Some(w)) if w > 0.0 => Some(1.0 - l / w),
                _ => None,
            },
        })
        .collect();
    Ok(Report { task: first.task, rows })
}

const SUMMARY_HEADER: [&str; 10] = [
    "scheme",
    "task",
    "episodes",
    "cumulative_load",
    "delivered_load",
    "reduction_pct",
    "mean_e_q",
    "mean_e_qdot",
    "delivery_rate",
    "phase_bytes",
];

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or("N/A".to_string(), |x| format!("{x:.prec$}"))
}

impl Report {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(SUMMARY_HEADER)?;
        for r in &self.rows {
            let s = &r.summary;
            let phases = s
                .phase_bytes
                .iter()
                .map(|(p, b)| format!("{p}={b:.1}"))
                .collect::<Vec<_>>()
                .join(";");
            wr.write_record([
                s.scheme.clone(),
                s.task.to_string(),
                s.episodes.to_string(),
                opt(s.cumulative_load, 1),
                opt(s.delivered_load, 1),
                opt(r.reduction.map(|x| 100.0 * x), 2),
                format!("{:.9e}", s.mean_e_q),
                format!("{:.9e}", s.mean_e_qdot),
                format!("{:.6}", s.delivery_rate),
                phases,
            ])?;
        }
        wr.flush().map_err(|e| Error::io(Path::new("summary.csv"), e))?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task: {}", self.task);
        let _ = writeln!(
            out,
            "{:<16} {:>16} {:>10} {:>18} {:>18}",
            "scheme", "cumulative_load", "reduction", "angle_error_pct", "velocity_error_pct"
        );
        for r in &self.rows {
            let s = &r.summary;
            let _ = writeln!(
                out,
                "{:<16} {:>16} {:>10} {:>18.4e} {:>18.4e}",
                s.scheme,
                opt(s.cumulative_load, 1),
                r.reduction.map_or("-".to_string(), |x| format!("{:.2}%", 100.0 * x)),
                100.0 * s.mean_e_q,
                100.0 * s.mean_e_qdot,
            );
        }
        out
    }
}

/// Read a summary CSV back (as written by [`Report::write_csv`]).
pub fn read_summary_csv(path: &Path) -> Result<Vec<RunSummary>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rd = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s == "N/A" || s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Config(format!("bad number `{s}` in {}", path.display())))
        }
    };
    let parse = |s: &str| -> Result<f64> {
        s.parse().map_err(|_| Error::Config(format!("bad number `{s}` in {}", path.display())))
    };
    for rec in rd.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let mut phase_bytes = BTreeMap::new();
        for kv in get(9).split(';').filter(|s| !s.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("bad phase entry `{kv}`")))?;
            let phase: Phase = serde_json::from_value(serde_json::Value::String(k.to_string()))?;
            phase_bytes.insert(phase, parse(v)?);
        }
        out.push(RunSummary {
            scheme: get(0).to_string(),
            task: get(1).parse()?,
            episodes: get(2).parse().unwrap_or(0),
            cumulative_load: parse_opt(get(3))?,
            delivered_load: parse_opt(get(4))?,
            mean_e_q: parse(get(6))?,
            mean_e_qdot: parse(get(7))?,
            delivery_rate: parse_opt(get(8))?.unwrap_or(0.0),
            phase_bytes,
        });
    }
    Ok(out)
}

/// Serialized trained gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub task: TaskKind,
    pub case: ConstraintCase,
    pub constraints: Constraints,
    pub layer_sizes: Vec<usize>,
    pub theta: Vec<f64>,
    pub theta_target: Vec<f64>,
    pub optimizer_sq_avg: Vec<f64>,
    pub dqn: DqnConfig,
    pub epsilon: f64,
    pub episode: usize,
    pub steps: u64,
    pub train_steps: u64,
    #[serde(default)]
    pub input: Option<InputScaler>,
    pub pid: PidLagrangianState,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn from_training(task: TaskKind, t: &Training) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            task,
            case: t.case,
            constraints: t.constraints,
            layer_sizes: t.agent.online.sizes().to_vec(),
            theta: t.agent.online.params().to_vec(),
            theta_target: t.agent.target.params().to_vec(),
            optimizer_sq_avg: t.agent.opt.sq_avg.clone(),
            dqn: t.agent.cfg.clone(),
            epsilon: t.agent.epsilon(),
            episode: t.rows.len(),
            steps: t.agent.steps,
            train_steps: t.agent.train_steps,
            input: t.agent.input.clone(),
            pid: t.pid,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        Ok(ck)
    }

    /// Rebuild a greedy agent from the stored parameters.
    pub fn agent(&self) -> Result<DqnAgent> {
        let state_dim = *self.layer_sizes.first().ok_or_else(|| Error::Checkpoint("no layers".into()))?;
        let mut agent = DqnAgent::new(self.dqn.clone(), state_dim, 1, 0)?;
        agent.online = Mlp::from_params(&self.layer_sizes, self.theta.clone())?;
        agent.target = Mlp::from_params(&self.layer_sizes, self.theta_target.clone())?;
        if self.optimizer_sq_avg.len() != agent.online.n_params() {
            return Err(Error::Checkpoint("optimizer state size mismatch".into()));
        }
        agent.opt = RmsProp { cfg: self.dqn.rmsprop, sq_avg: self.optimizer_sq_avg.clone() };
        agent.steps = self.steps;
        agent.train_steps = self.train_steps;
        if let Some(sc) = &self.input {
            if sc.shift.len() != state_dim || sc.scale.len() != state_dim {
                return Err(Error::Checkpoint("input scaler size mismatch".into()));
            }
        }
        agent.input = self.input.clone();
        Ok(agent)
    }
}
