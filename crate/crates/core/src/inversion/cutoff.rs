//! Smooth time cutoff `chi` with `chi = 0` for `t <= t1` and `chi = 1` for
//! `t >= t2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `0 < t1 < t2 < epsilon < T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffParams {
    pub epsilon: f64,
    pub t1: f64,
    pub t2: f64,
}

impl CutoffParams {
    /// `epsilon = T / 4`, `t1 = epsilon / 3`, `t2 = 2 epsilon / 3`.
    pub fn default_for(horizon: f64) -> Self {
        Self::from_epsilon(0.25 * horizon)
    }

    /// `t1 = epsilon / 3`, `t2 = 2 epsilon / 3`.
    pub fn from_epsilon(epsilon: f64) -> Self {
        Self { epsilon, t1: epsilon / 3.0, t2: 2.0 * epsilon / 3.0 }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if !(0.0 < self.t1 && self.t1 < self.t2 && self.t2 < self.epsilon && self.epsilon < horizon) {
            return Err(Error::Precondition(format!(
                "cutoff needs 0 < t1 < t2 < epsilon < T, got t1 = {}, t2 = {}, epsilon = {}, T = {horizon}",
                self.t1, self.t2, self.epsilon
            )));
        }
        Ok(())
    }

    pub fn chi(&self, t: f64) -> f64 {
        ramp(t, self.t1, self.t2).0
    }

    pub fn chi_t(&self, t: f64) -> f64 {
        ramp(t, self.t1, self.t2).1
    }
}

// quintic smoothstep 6s^5 - 15s^4 + 10s^3 and its time derivative
fn ramp(t: f64, t1: f64, t2: f64) -> (f64, f64) {
    let w = t2 - t1;
    let s = ((t - t1) / w).clamp(0.0, 1.0);
    let v = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
    let d = if s > 0.0 && s < 1.0 { 30.0 * s * s * (1.0 - s) * (1.0 - s) / w } else { 0.0 };
    (v, d)
}

/// `chi(t; t1, t2)`; C^2 with `max |chi'| = 1.875 / (t2 - t1)`.
pub fn cutoff_chi(t: f64, t1: f64, t2: f64) -> Result<f64> {
    if !(t1 < t2) {
        return Err(Error::Precondition(format!("cutoff needs t1 < t2, got {t1} >= {t2}")));
    }
    Ok(ramp(t, t1, t2).0)
}

/// `chi'(t; t1, t2)`.
pub fn cutoff_chi_t(t: f64, t1: f64, t2: f64) -> Result<f64> {
    if !(t1 < t2) {
        return Err(Error::Precondition(format!("cutoff needs t1 < t2, got {t1} >= {t2}")));
    }
    Ok(ramp(t, t1, t2).1)
}
