//! Deep Q-learning for the transmit/discard decision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, RmsProp, RmsPropConfig};
use super::replay::{ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::message::FULL_MESSAGE_BYTES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub rmsprop: RmsPropConfig,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Target network refresh period, in training steps.
    pub target_sync: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of all training decisions over which ε decays linearly.
    pub eps_decay_fraction: f64,
    /// Standardize network inputs with statistics of the FS decision states.
    pub standardize_inputs: bool,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            gamma: 0.9,
            rmsprop: RmsPropConfig::default(),
            batch_size: 32,
            buffer_capacity: 40_000,
            target_sync: 1000,
            eps_start: 0.99,
            eps_end: 0.001,
            eps_decay_fraction: 0.6,
            standardize_inputs: true,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size || self.target_sync == 0 {
            return Err(Error::Config("batch size, buffer capacity and target sync must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return Err(Error::Config("epsilon outside [0, 1]".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("zero-width hidden layer".into()));
        }
        Ok(())
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// `-L / L_full` when transmitting, 0 when discarding.
pub fn reward(msg_bytes: usize, transmitted: bool) -> f64 {
    if transmitted {
        -(msg_bytes as f64) / FULL_MESSAGE_BYTES as f64
    } else {
        0.0
    }
}

pub fn argmax(q: &[f64]) -> u8 {
    if q[1] > q[0] {
        1
    } else {
        0
    }
}

pub fn td_target(tr: &Transition, target: &Mlp, gamma: f64) -> f64 {
    let base = tr.r - tr.c;
    if tr.done || gamma == 0.0 {
        return base;
    }
    let q = target.forward(&tr.s_next);
    base + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Mean squared TD error over `batch`, gradient accumulated into `grad`.
pub fn batch_loss_grad(online: &Mlp, target: &Mlp, batch: &[&Transition], gamma: f64, grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut d_out = vec![0.0; online.output_dim()];
    for tr in batch {
        let y = td_target(tr, target, gamma);
        let cache = online.forward_cached(&tr.s);
        let a = tr.a as usize;
        let err = cache.output()[a] - y;
        loss += err * err;
        d_out.iter_mut().for_each(|d| *d = 0.0);
        d_out[a] = 2.0 * err / n;
        online.backward(&cache, &d_out, grad);
    }
    loss / n
}

pub fn batch_loss(online: &Mlp, target: &Mlp, batch: &[&Transition], gamma: f64) -> f64 {
    let n = batch.len() as f64;
    batch
        .iter()
        .map(|tr| {
            let err = online.forward(&tr.s)[tr.a as usize] - td_target(tr, target, gamma);
            err * err
        })
        .sum::<f64>()
        / n
}

/// ε-greedy action.
pub fn select_action<R: Rng + ?Sized>(net: &Mlp, s: &[f64], epsilon: f64, rng: &mut R) -> u8 {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..2u8)
    } else {
        argmax(&net.forward(s))
    }
}

/// Fixed per-feature affine map applied to states before the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaler {
    /// Mean and standard deviation per feature; constant features are only shifted.
    pub fn fit(states: &[Vec<f64>]) -> Result<Self> {
        let dim = states.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Config("no states to fit the input scaler".into()));
        }
        if let Some(s) = states.iter().find(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: s.len() });
        }
        let n = states.len() as f64;
        let mut shift = vec![0.0; dim];
        for s in states {
            shift.iter_mut().zip(s).for_each(|(m, x)| *m += x / n);
        }
        let mut scale = vec![0.0; dim];
        for s in states {
            scale.iter_mut().zip(s.iter().zip(&shift)).for_each(|(v, (x, m))| *v += (x - m) * (x - m) / n);
        }
        for v in &mut scale {
            *v = if *v > 1e-20 { v.sqrt() } else { 1.0 };
        }
        Ok(Self { shift, scale })
    }

    pub fn apply(&self, s: &mut [f64]) {
        for ((x, m), d) in s.iter_mut().zip(&self.shift).zip(&self.scale) {
            *x = (*x - m) / d;
        }
    }
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub cfg: DqnConfig,
    pub online: Mlp,
    pub target: Mlp,
    pub opt: RmsProp,
    pub buffer: ReplayBuffer,
    pub schedule: EpsilonSchedule,
    /// Decisions taken while exploring.
    pub steps: u64,
    pub train_steps: u64,
    pub input: Option<InputScaler>,
    rng: ChaCha8Rng,
    grad: Vec<f64>,
}

impl DqnAgent {
    pub fn new(cfg: DqnConfig, state_dim: usize, decay_steps: u64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![state_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(2);
        let online = Mlp::new(&sizes, &mut rng)?;
        let n = online.n_params();
        Ok(Self {
            target: online.clone(),
            opt: RmsProp::new(cfg.rmsprop, n),
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            schedule: EpsilonSchedule { start: cfg.eps_start, end: cfg.eps_end, decay_steps: decay_steps.max(1) },
            steps: 0,
            train_steps: 0,
            input: None,
            online,
            rng,
            grad: vec![0.0; n],
            cfg,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.schedule.value(self.steps)
    }

    /// Map a raw state to network input.
    pub fn prepare(&self, s: &mut [f64]) {
        if let Some(sc) = &self.input {
            sc.apply(s);
        }
    }

    /// ε-greedy during training, greedy otherwise.
    pub fn act(&mut self, s: &[f64], explore: bool) -> u8 {
        if explore {
            let eps = self.epsilon();
            self.steps += 1;
            select_action(&self.online, s, eps, &mut self.rng)
        } else {
            argmax(&self.online.forward(s))
        }
    }

    /// Store a transition and take one gradient step once the buffer holds a batch.
    pub fn observe(&mut self, tr: Transition) -> Result<Option<f64>> {
        self.buffer.push(tr);
        if self.buffer.len() < self.cfg.batch_size {
            return Ok(None);
        }
        self.train_step().map(Some)
    }

    pub fn train_step(&mut self) -> Result<f64> {
        let batch_size = self.cfg.batch_size;
        if self.buffer.len() < batch_size {
            return Err(Error::BufferUnderfull { len: self.buffer.len(), batch: batch_size });
        }
        let idx = self.buffer.sample_indices(batch_size, &mut self.rng);
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i)).collect();
        let loss = batch_loss_grad(&self.online, &self.target, &batch, self.cfg.gamma, &mut self.grad);
        self.opt.step(self.online.params_mut(), &self.grad);
        self.train_steps += 1;
        if self.train_steps % self.cfg.target_sync == 0 {
            self.target = self.online.clone();
        }
        Ok(loss)
    }
}
