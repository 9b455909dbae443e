//! The weight `theta = exp(l)`, `l = lambda (t + 2)^mu`, evaluated without
//! forming `theta` itself.
//!
//! At the admissible `mu >= 144 (T + 2)^2` even `l(T)` exceeds the double
//! range, so every quantity is built from `ln l = ln lambda + mu ln(t + 2)`
//! and from the stable gap `l(b) - l(a)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gauss_legendre_unit, LogSumExp};

/// `144 (T + 2)^2`.
pub fn mu_min(horizon: f64) -> f64 {
    144.0 * (horizon + 2.0).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarlemanWeight {
    pub lambda: f64,
    pub mu: f64,
    pub horizon: f64,
}

/// A time coefficient `C (t + 2)^q` stored as `(ln C, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficient {
    pub ln_c: f64,
    pub q: f64,
}

impl Coefficient {
    pub fn new(c: f64, q: f64) -> Self {
        Self { ln_c: if c > 0.0 { c.ln() } else { f64::NEG_INFINITY }, q }
    }

    pub fn from_log(ln_c: f64, q: f64) -> Self {
        Self { ln_c, q }
    }

    pub fn ln_at(&self, t: f64) -> f64 {
        if self.ln_c == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.ln_c + self.q * (t + 2.0).ln()
        }
    }
}

/// Time quadrature for weighted integrals over one step `[t_k, t_{k+1}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeRule {
    /// The weight and coefficient are integrated exactly over the step;
    /// state integrands are interpolated linearly between `t_k` and
    /// `t_{k+1}`, step data (drift and noise coefficients) are constant.
    #[default]
    WeightExact,
    /// Plain left-endpoint rule `dt c(t_k) theta(t_k)^kappa v(t_k)`.
    LeftEndpoint,
}

impl CarlemanWeight {
    pub fn new(lambda: f64, mu: f64, horizon: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Precondition(format!("lambda = {lambda} must be finite and >= 0")));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Precondition(format!("mu = {mu} must be positive")));
        }
        if !(horizon > 0.0) {
            return Err(Error::Precondition(format!("T = {horizon} must be positive")));
        }
        Ok(Self { lambda, mu, horizon })
    }

    /// `ln l(t)`; `-inf` for `lambda = 0`.
    pub fn ln_ell(&self, t: f64) -> f64 {
        if self.lambda == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.lambda.ln() + self.mu * (t + 2.0).ln()
        }
    }

    /// `l(t) = lambda (t + 2)^mu`; may be `+inf` at large `mu`.
    pub fn weight_log(&self, t: f64) -> f64 {
        self.ln_ell(t).exp()
    }

    /// `l(b) - l(a) >= 0` for `a <= b`, without cancellation.
    pub fn ell_gap(&self, a: f64, b: f64) -> f64 {
        if self.lambda == 0.0 || a == b {
            return 0.0;
        }
        let r = self.mu * ((a + 2.0) / (b + 2.0)).ln();
        (self.ln_ell(b) + (-r.exp_m1()).ln()).exp()
    }

    /// `2 l(T)`, the reference shift removed from every weighted term.
    pub fn reference_shift(&self) -> f64 {
        2.0 * self.weight_log(self.horizon)
    }

    /// `theta(t)^2 / theta(T)^2`, which equals 1 at `t = T`.
    pub fn normalized_theta_sq(&self, t: f64) -> f64 {
        (-2.0 * self.ell_gap(t, self.horizon)).exp()
    }

    /// `ln(lambda mu (T + 2)^{mu - 1})` clipped below at 0; part of the
    /// data-independent normalization.
    pub fn ln_scale(&self) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        (self.lambda.ln() + self.mu.ln() + (self.mu - 1.0) * (self.horizon + 2.0).ln()).max(0.0)
    }

    /// `ln` of `theta(t)^kappa / (theta(T)^2 scale)` at a time slice.
    pub fn ln_slice_factor(&self, kappa: f64, t: f64) -> f64 {
        self.ln_kappa_shift(kappa, t) - self.ln_scale()
    }

    // kappa l(t) - 2 l(T)
    fn ln_kappa_shift(&self, kappa: f64, t: f64) -> f64 {
        let gap = self.ell_gap(t, self.horizon);
        let mut v = -kappa * gap;
        if kappa != 2.0 {
            v -= (2.0 - kappa) * self.weight_log(self.horizon);
        }
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    /// `ln` of `int_a^b c(t) theta(t)^kappa dt / (theta(T)^2 scale)`.
    pub fn ln_step_integral(&self, rule: TimeRule, kappa: f64, c: Coefficient, a: f64, b: f64) -> f64 {
        if c.ln_c == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let base = match rule {
            TimeRule::LeftEndpoint => (b - a).ln() + c.ln_at(a) + self.ln_kappa_shift(kappa, a),
            TimeRule::WeightExact => self.ln_integral_rel(kappa, c, a, b) + self.ln_kappa_shift(kappa, b),
        };
        base - self.ln_scale()
    }

    /// `ln` of `int_a^b c(t) theta^kappa v(t) dt / (theta(T)^2 scale)` with
    /// `v` linear between `v(a) = va >= 0` and `v(b) = vb >= 0`.
    pub fn ln_step_integral_linear(
        &self,
        rule: TimeRule,
        kappa: f64,
        c: Coefficient,
        a: f64,
        b: f64,
        va: f64,
        vb: f64,
    ) -> f64 {
        if c.ln_c == f64::NEG_INFINITY || (va <= 0.0 && vb <= 0.0) {
            return f64::NEG_INFINITY;
        }
        match rule {
            TimeRule::LeftEndpoint => ln_pos(va) + self.ln_step_integral(rule, kappa, c, a, b),
            TimeRule::WeightExact => {
                let lin = |t: f64| ln_pos((va * (b - t) + vb * (t - a)) / (b - a));
                self.ln_integral_rel_with(kappa, c, a, b, &lin) + self.ln_kappa_shift(kappa, b) - self.ln_scale()
            }
        }
    }

    /// `ln int_a^b c(t) exp(kappa (l(t) - l(b))) dt`.
    pub fn ln_integral_rel(&self, kappa: f64, c: Coefficient, a: f64, b: f64) -> f64 {
        self.ln_integral_rel_with(kappa, c, a, b, &|_| 0.0)
    }

    // same with an extra smooth factor exp(ln_g(t))
    fn ln_integral_rel_with(&self, kappa: f64, c: Coefficient, a: f64, b: f64, ln_g: &dyn Fn(f64) -> f64) -> f64 {
        let delta = kappa * self.ell_gap(a, b);
        let poly = (c.q * ((b + 2.0) / (a + 2.0)).ln()).abs();
        let gl = gauss_legendre_unit(8);
        if delta <= 64.0 {
            let pieces = ((delta + poly).ceil() as usize).clamp(1, 128);
            let h = (b - a) / pieces as f64;
            let mut acc = LogSumExp::new();
            for i in 0..pieces {
                let lo = a + i as f64 * h;
                for &(x, w) in &gl {
                    let t = lo + x * h;
                    acc.add(w.ln() + h.ln() + c.ln_at(t) + ln_g(t) - kappa * self.ell_gap(t, b));
                }
            }
            return acc.log_total();
        }
        // substitute y = kappa (l(t) - l(b)) on [max(y_a, -100), 0]
        let y_lo = (-delta).max(-100.0);
        let ell_b = self.weight_log(b);
        let ln_rate = |t: f64| kappa.ln() + self.lambda.ln() + self.mu.ln() + (self.mu - 1.0) * (t + 2.0).ln();
        let pieces = ((-y_lo / 4.0).ceil() as usize).max(1);
        let h = -y_lo / pieces as f64;
        let mut acc = LogSumExp::new();
        for i in 0..pieces {
            let lo = y_lo + i as f64 * h;
            for &(x, w) in &gl {
                let y = lo + x * h;
                let ratio = if ell_b.is_finite() { y / (kappa * ell_b) } else { 0.0 };
                let t = (b + 2.0) * (ratio.ln_1p() / self.mu).exp() - 2.0;
                acc.add(w.ln() + h.ln() + c.ln_at(t) + ln_g(t) - ln_rate(t) + y);
            }
        }
        acc.log_total()
    }
}

fn ln_pos(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        f64::NEG_INFINITY
    }
}
