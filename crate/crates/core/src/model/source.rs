//! Source terms `G(t, x) = r(t, x') R(t, x)` with `x' = (x2, ..., xn)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The factor `r(t, x')`, independent of `x1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceProfile {
    Zero,
    Constant { value: f64 },
    /// `amp (1 + 0.5 sin(omega t)) cos(pi x2 / L)^{n-1}`.
    Smooth { amp: f64, omega: f64 },
    /// Piecewise constant in time, one value per step, constant in `x'`.
    Steps { values: Vec<f64> },
    /// Piecewise constant in time and on the transverse grid; row-major
    /// `K x transverse` values, `transverse = 1` in one dimension.
    Table { transverse: usize, values: Vec<f64> },
}

impl Default for SourceProfile {
    fn default() -> Self {
        SourceProfile::Zero
    }
}

/// The known factor `R(t, x) = base + amp (1 + growth t) exp(-|x - c|^2 / 2 w^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceShape {
    pub base: f64,
    pub amp: f64,
    pub growth: f64,
    pub width: f64,
    pub center: [f64; 2],
}

impl Default for SourceShape {
    fn default() -> Self {
        Self { base: 1.0, amp: 0.0, growth: 0.0, width: 1.0, center: [0.0; 2] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceTerm {
    #[serde(default)]
    pub r: SourceProfile,
    #[serde(default)]
    pub shape: SourceShape,
}

/// `R` and its derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeJet {
    pub value: f64,
    pub dt: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

impl ShapeJet {
    pub fn laplacian(&self, dim: usize) -> f64 {
        (0..dim).map(|a| self.hess[a][a]).sum()
    }
}

impl SourceShape {
    pub fn jet(&self, t: f64, x: [f64; 2], dim: usize) -> ShapeJet {
        let w2 = self.width * self.width;
        let d: Vec<f64> = (0..2).map(|a| if a < dim { x[a] - self.center[a] } else { 0.0 }).collect();
        let r2 = d[0] * d[0] + d[1] * d[1];
        let e = (-r2 / (2.0 * w2)).exp();
        let s = self.amp * (1.0 + self.growth * t);
        let g = s * e;
        let mut grad = [0.0; 2];
        let mut hess = [[0.0; 2]; 2];
        for j in 0..dim {
            grad[j] = -d[j] / w2 * g;
            for k in 0..dim {
                let delta = if j == k { 1.0 } else { 0.0 };
                hess[j][k] = (d[j] * d[k] / (w2 * w2) - delta / w2) * g;
            }
        }
        ShapeJet { value: self.base + g, dt: self.amp * self.growth * e, grad, hess }
    }

    pub fn value(&self, t: f64, x: [f64; 2], dim: usize) -> f64 {
        self.jet(t, x, dim).value
    }
}

impl SourceProfile {
    /// `r` at step `k` (time `t`), transverse coordinate `x2`.
    pub fn value(&self, k: usize, t: f64, x2: f64, half_width: f64, dim: usize) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant { value } => *value,
            Self::Smooth { amp, omega } => {
                let tr = if dim == 2 { (std::f64::consts::PI * x2 / half_width).cos() } else { 1.0 };
                amp * (1.0 + 0.5 * (omega * t).sin()) * tr
            }
            Self::Steps { values } => values.get(k).or(values.last()).copied().unwrap_or(0.0),
            Self::Table { transverse, values } => {
                let m = *transverse;
                let j = if m <= 1 {
                    0
                } else {
                    let h = 2.0 * half_width / m as f64;
                    (((x2 + half_width) / h).round() as i64).rem_euclid(m as i64) as usize
                };
                values.get(k * m + j).copied().unwrap_or(0.0)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Constant { value } => *value == 0.0,
            Self::Smooth { amp, .. } => *amp == 0.0,
            Self::Steps { values } | Self::Table { values, .. } => values.iter().all(|v| *v == 0.0),
        }
    }
}

impl SourceTerm {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if let SourceProfile::Steps { values } = &self.r {
            if values.len() != steps {
                return Err(Error::Model(format!(
                    "step profile has {} values for K = {steps}",
                    values.len()
                )));
            }
        }
        if let SourceProfile::Table { transverse, values } = &self.r {
            if *transverse == 0 || values.len() != steps * transverse {
                return Err(Error::Model(format!(
                    "source table has {} values for K = {steps} and {transverse} transverse points",
                    values.len()
                )));
            }
        }
        if !(self.shape.width > 0.0) {
            return Err(Error::Model("source shape width must be positive".into()));
        }
        Ok(())
    }

    /// `G(t_k, x)`.
    pub fn value(&self, k: usize, t: f64, x: [f64; 2], half_width: f64, dim: usize) -> f64 {
        if self.r.is_zero() {
            return 0.0;
        }
        self.r.value(k, t, x[1], half_width, dim) * self.shape.value(t, x, dim)
    }

    /// Smallest `|R|` over sample points; zero when `R` changes sign on
    /// them, since the continuous `R` then vanishes in between.
    pub fn min_abs_shape(&self, samples: impl Iterator<Item = (f64, [f64; 2])>, dim: usize) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut m = f64::INFINITY;
        for (t, x) in samples {
            let v = self.shape.value(t, x, dim);
            lo = lo.min(v);
            hi = hi.max(v);
            m = m.min(v.abs());
        }
        if lo < 0.0 && hi > 0.0 {
            0.0
        } else {
            m
        }
    }
}
