//! Lagrange multipliers driven by PID control of the constraint violation.
//!
//! Per constraint `j`, once per episode:
//! `Δ = ē - C`, `I = max(I + Δ, 0)`, `D = max(ē - ē_prev, 0)`,
//! `λ = max(K_P Δ + K_I I + K_D D, 0)`.
//! `error_scale` multiplies `Δ` and `D` before they enter the controller; it
//! is 1 for the plain form and lets callers express errors relative to `C`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    /// Integral-only update, i.e. the classical dual ascent.
    pub const CLASSICAL: PidGains = PidGains { kp: 0.0, ki: 1.0, kd: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if [self.kp, self.ki, self.kd].iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(Error::NegativeGain);
        }
        Ok(())
    }
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 0.5, ki: 1.0, kd: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidMultiplier {
    pub gains: PidGains,
    pub error_scale: f64,
    pub lambda: f64,
    pub integral: f64,
    pub prev_mean: Option<f64>,
    pub last_delta: f64,
    pub last_derivative: f64,
}

impl PidMultiplier {
    pub fn new(gains: PidGains, error_scale: f64) -> Result<Self> {
        gains.validate()?;
        if !(error_scale.is_finite() && error_scale > 0.0) {
            return Err(Error::Config("PID error scale must be positive".into()));
        }
        Ok(Self { gains, error_scale, lambda: 0.0, integral: 0.0, prev_mean: None, last_delta: 0.0, last_derivative: 0.0 })
    }

    pub fn update(&mut self, mean_error: f64, constraint: f64) -> f64 {
        let delta = self.error_scale * (mean_error - constraint);
        self.integral = (self.integral + delta).max(0.0);
        let derivative = self.prev_mean.map_or(0.0, |p| self.error_scale * (mean_error - p).max(0.0));
        let g = self.gains;
        self.lambda = (g.kp * delta + g.ki * self.integral + g.kd * derivative).max(0.0);
        self.prev_mean = Some(mean_error);
        self.last_delta = delta;
        self.last_derivative = derivative;
        self.lambda
    }
}

/// Multipliers for the angle and velocity constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidLagrangianState {
    pub q: PidMultiplier,
    pub qdot: PidMultiplier,
}

impl PidLagrangianState {
    pub fn new(gains: PidGains, scale_q: f64, scale_qdot: f64) -> Result<Self> {
        Ok(Self { q: PidMultiplier::new(gains, scale_q)?, qdot: PidMultiplier::new(gains, scale_qdot)? })
    }

    pub fn lambdas(&self) -> (f64, f64) {
        (self.q.lambda, self.qdot.lambda)
    }

    /// Per-slot cost `λ¹ e_q + λ² e_q̇`.
    pub fn cost(&self, e_q: f64, e_qdot: f64) -> f64 {
        self.q.lambda * e_q + self.qdot.lambda * e_qdot
    }

    pub fn update(&mut self, mean_e_q: f64, mean_e_qdot: f64, c_q: f64, c_qdot: f64) {
        self.q.update(mean_e_q, c_q);
        self.qdot.update(mean_e_qdot, c_qdot);
    }
}
