//! Uplink model: Nakagami-m block fading, path loss and an SNR threshold.
//!
//! The power gain `g` of each 1 ms slot is drawn from Gamma(m, Ω/m), the
//! channel gain is `h = d^-α g`, and a packet is decoded iff
//! `p_tx + 10 log10(h) - noise >= β` (all in dB/dBm). ACKs are ideal and
//! arrive in the same slot.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub m_shape: f64,
    pub omega: f64,
    /// Path-loss exponent.
    pub alpha: f64,
    /// Link distance, m.
    pub d: f64,
    pub p_tx_dbm: f64,
    pub noise_dbm: f64,
    pub beta_db: f64,
}

impl ChannelParams {
    /// Parameter set with the published values verbatim.
    pub const PAPER: ChannelParams = ChannelParams {
        m_shape: 1.0,
        omega: 1.0,
        alpha: 4.31,
        d: 110.0,
        p_tx_dbm: 5.5,
        noise_dbm: -90.0,
        beta_db: 18.0,
    };

    pub const DEFAULT_TARGET_DELIVERY: f64 = 0.95;

    /// Published parameters with Ω solved for 95 % delivery.
    pub fn calibrated_default() -> Self {
        Self::PAPER
            .calibrate_omega(Self::DEFAULT_TARGET_DELIVERY)
            .expect("published parameters admit calibration")
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.m_shape, self.omega, self.alpha, self.d, self.p_tx_dbm, self.noise_dbm, self.beta_db]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidChannel("non-finite parameter".into()));
        }
        if self.m_shape < 0.5 {
            return Err(Error::InvalidChannel(format!("m = {} < 0.5", self.m_shape)));
        }
        if self.omega <= 0.0 || self.d <= 0.0 {
            return Err(Error::InvalidChannel("omega and d must be positive".into()));
        }
        Ok(())
    }

    /// Smallest power gain `g` that is still decoded.
    pub fn threshold_gain(&self) -> f64 {
        let db = self.beta_db - self.p_tx_dbm + self.noise_dbm + 10.0 * self.alpha * self.d.log10();
        10f64.powf(db / 10.0)
    }

    pub fn snr_db(&self, g: f64) -> f64 {
        self.p_tx_dbm + 10.0 * (self.d.powf(-self.alpha) * g).log10() - self.noise_dbm
    }

    /// `P[g >= g*]`, the regularized upper incomplete gamma `Q(m, m g*/Ω)`.
    pub fn delivery_probability(&self) -> f64 {
        gamma_ur(self.m_shape, self.m_shape * self.threshold_gain() / self.omega)
    }

    /// Gain CDF `P(m, m x/Ω)`.
    pub fn gain_cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        gamma_lr(self.m_shape, self.m_shape * x / self.omega)
    }

    /// Solve for Ω (other parameters fixed) so delivery hits `target`.
    pub fn calibrate_omega(&self, target: f64) -> Result<Self> {
        self.validate()?;
        check_target(target)?;
        let prob = |log_omega: f64| ChannelParams { omega: log_omega.exp(), ..*self }.delivery_probability();
        // Delivery rises monotonically with Ω.
        let x = bisect(prob, target, -60.0, 60.0)?;
        Ok(ChannelParams { omega: x.exp(), ..*self })
    }

    /// Solve for β (other parameters fixed) so delivery hits `target`.
    pub fn calibrate_beta(&self, target: f64) -> Result<Self> {
        self.validate()?;
        check_target(target)?;
        // Delivery falls with β; flip sign to reuse the increasing bisection.
        let prob = |neg_beta: f64| ChannelParams { beta_db: -neg_beta, ..*self }.delivery_probability();
        let x = bisect(prob, target, -300.0, 300.0)?;
        Ok(ChannelParams { beta_db: -x, ..*self })
    }

    /// Deterministic outcome for a given power gain.
    pub fn outcome_for_gain(&self, g: f64) -> LinkOutcome {
        let snr_db = self.snr_db(g);
        LinkOutcome { delivered: snr_db >= self.beta_db, snr_db, gain: g }
    }
}

fn check_target(target: f64) -> Result<()> {
    if target > 0.0 && target < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidChannel(format!("target delivery {target} outside (0, 1)")))
    }
}

fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    if f(lo) > target || f(hi) < target {
        return Err(Error::InvalidChannel("calibration target not bracketed".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkOutcome {
    pub delivered: bool,
    pub snr_db: f64,
    pub gain: f64,
}

/// The sender learns the outcome in the same slot.
pub fn ack(outcome: &LinkOutcome) -> bool {
    outcome.delivered
}

/// Anything that can carry one packet per slot.
pub trait Link {
    fn transmit(&mut self, msg_bytes: usize) -> Result<LinkOutcome>;
}

fn check_bytes(msg_bytes: usize) -> Result<()> {
    if msg_bytes == 0 {
        return Err(Error::InvalidChannel("empty message offered to the channel".into()));
    }
    Ok(())
}

/// Fading uplink owning its RNG.
#[derive(Debug, Clone)]
pub struct UplinkChannel {
    params: ChannelParams,
    gamma: Gamma<f64>,
    rng: ChaCha8Rng,
}

impl UplinkChannel {
    pub fn new(params: ChannelParams, seed: u64) -> Result<Self> {
        Self::with_rng(params, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(params: ChannelParams, rng: ChaCha8Rng) -> Result<Self> {
        params.validate()?;
        let gamma = Gamma::new(params.m_shape, params.omega / params.m_shape)
            .map_err(|e| Error::InvalidChannel(e.to_string()))?;
        Ok(Self { params, gamma, rng })
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn sample_gain(&mut self) -> f64 {
        self.gamma.sample(&mut self.rng)
    }
}

impl Link for UplinkChannel {
    fn transmit(&mut self, msg_bytes: usize) -> Result<LinkOutcome> {
        check_bytes(msg_bytes)?;
        let g = self.sample_gain();
        Ok(self.params.outcome_for_gain(g))
    }
}

/// Wired link: every packet arrives.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerfectLink;

impl Link for PerfectLink {
    fn transmit(&mut self, msg_bytes: usize) -> Result<LinkOutcome> {
        check_bytes(msg_bytes)?;
        Ok(LinkOutcome { delivered: true, snr_db: f64::INFINITY, gain: f64::INFINITY })
    }
}

/// Replays a fixed outcome sequence, then repeats `tail`.
#[derive(Debug, Clone)]
pub struct ScriptedLink {
    outcomes: Vec<bool>,
    tail: bool,
    next: usize,
}

impl ScriptedLink {
    pub fn new(outcomes: Vec<bool>, tail: bool) -> Self {
        Self { outcomes, tail, next: 0 }
    }
}

impl Link for ScriptedLink {
    fn transmit(&mut self, msg_bytes: usize) -> Result<LinkOutcome> {
        check_bytes(msg_bytes)?;
        let delivered = self.outcomes.get(self.next).copied().unwrap_or(self.tail);
        self.next += 1;
        Ok(LinkOutcome { delivered, snr_db: if delivered { f64::INFINITY } else { f64::NEG_INFINITY }, gain: f64::NAN })
    }
}
