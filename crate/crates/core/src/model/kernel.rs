//! Interaction kernels `K(x, y)` and the nonlocal term `int K(x, y) rho(y) dy`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner, spectral, Field, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    None,
    /// `a exp(-|d|^2 / 2 sigma^2)` for `|d| <= radius`, zero beyond; `d` is the
    /// periodic displacement `x - y`.
    Gaussian { amp: f64, sigma: f64, radius: f64 },
    /// `sum_m a_m cos(m pi x1 / L) cos(m pi y1 / L)`.
    LowRank { amps: Vec<f64> },
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::None
    }
}

fn periodic_displacement(grid: &Grid, d: f64) -> f64 {
    let w = 2.0 * grid.half_width();
    d - w * (d / w).round()
}

impl Kernel {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "none" => Ok(Self::None),
            "gaussian" => Ok(Self::Gaussian { amp: 1.0, sigma: 0.2, radius: 0.6 }),
            "low_rank" => Ok(Self::LowRank { amps: vec![0.5, 0.25] }),
            other => Err(Error::Model(format!("unknown kernel '{other}'"))),
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if let Self::Gaussian { sigma, radius, .. } = self {
            if !(*sigma > 0.0) || !(*radius > 0.0) || *radius >= grid.half_width() {
                return Err(Error::Model(format!(
                    "gaussian kernel needs sigma > 0 and 0 < radius < L = {}",
                    grid.half_width()
                )));
            }
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Self::None)
    }

    /// Pointwise kernel value.
    pub fn value(&self, grid: &Grid, x: [f64; 2], y: [f64; 2]) -> f64 {
        match self {
            Self::None => 0.0,
            Self::Gaussian { amp, sigma, radius } => {
                let mut r2 = 0.0;
                for a in 0..grid.dim() {
                    let d = periodic_displacement(grid, x[a] - y[a]);
                    r2 += d * d;
                }
                if r2 > radius * radius {
                    0.0
                } else {
                    amp * (-r2 / (2.0 * sigma * sigma)).exp()
                }
            }
            Self::LowRank { amps } => {
                let k = std::f64::consts::PI / grid.half_width();
                amps.iter()
                    .enumerate()
                    .map(|(m, a)| {
                        let w = k * (m + 1) as f64;
                        a * (w * x[0]).cos() * (w * y[0]).cos()
                    })
                    .sum()
            }
        }
    }

    // Gaussian samples at displacement = grid point offset from the origin
    // index, in wrap-around order; `dx1` gives the x1-derivative instead.
    fn wrapped(&self, grid: &Grid, dx1: bool) -> Field {
        let n = grid.points();
        let h = grid.spacing();
        let disp = |i: usize| {
            let m = crate::grid::spectral::mode(i, n);
            m as f64 * h
        };
        let (amp, sigma, radius) = match self {
            Self::Gaussian { amp, sigma, radius } => (*amp, *sigma, *radius),
            _ => unreachable!("wrapped samples exist for translation-invariant kernels"),
        };
        Field::from_fn(*grid, |x| {
            let idx = [grid.index_of(x[0]).unwrap_or(0), grid.index_of(x[1]).unwrap_or(0)];
            let d: Vec<f64> = (0..grid.dim()).map(|a| disp(idx[a])).collect();
            let r2: f64 = d.iter().map(|v| v * v).sum();
            if r2 > radius * radius {
                return 0.0;
            }
            let g = amp * (-r2 / (2.0 * sigma * sigma)).exp();
            if dx1 {
                -d[0] / (sigma * sigma) * g
            } else {
                g
            }
        })
    }

    /// `int K(x, y) rho(y) dy` by grid quadrature.
    pub fn apply(&self, rho: &Field) -> Field {
        self.apply_impl(rho, false)
    }

    /// `int K_{x1}(x, y) rho(y) dy`.
    pub fn apply_dx1(&self, rho: &Field) -> Field {
        self.apply_impl(rho, true)
    }

    fn apply_impl(&self, rho: &Field, dx1: bool) -> Field {
        let grid = *rho.grid();
        match self {
            Self::None => Field::zeros(grid),
            Self::Gaussian { .. } => spectral::periodic_convolution(&self.wrapped(&grid, dx1), rho),
            Self::LowRank { amps } => {
                let k = std::f64::consts::PI / grid.half_width();
                let mut out = Field::zeros(grid);
                for (m, a) in amps.iter().enumerate() {
                    let w = k * (m + 1) as f64;
                    let phi = Field::from_fn(grid, |x| (w * x[0]).cos());
                    let c = a * inner(&phi, rho);
                    let basis = if dx1 { Field::from_fn(grid, |x| -w * (w * x[0]).sin()) } else { phi };
                    out.axpy(c, &basis);
                }
                out
            }
        }
    }

    /// `||K||_{L^2(box x box)}` by grid quadrature.
    pub fn l2_norm(&self, grid: &Grid) -> f64 {
        self.l2_norm_impl(grid, false)
    }

    /// `||K_{x1}||_{L^2(box x box)}`.
    pub fn l2_norm_dx1(&self, grid: &Grid) -> f64 {
        self.l2_norm_impl(grid, true)
    }

    fn l2_norm_impl(&self, grid: &Grid, dx1: bool) -> f64 {
        match self {
            Self::None => 0.0,
            Self::Gaussian { .. } => {
                let w = self.wrapped(grid, dx1);
                (grid.box_volume() * inner(&w, &w)).sqrt()
            }
            Self::LowRank { amps } => {
                let k = std::f64::consts::PI / grid.half_width();
                let phis: Vec<(Field, Field)> = (0..amps.len())
                    .map(|m| {
                        let w = k * (m + 1) as f64;
                        let phi = Field::from_fn(*grid, |x| (w * x[0]).cos());
                        let d = Field::from_fn(*grid, |x| -w * (w * x[0]).sin());
                        (phi, d)
                    })
                    .collect();
                let mut s = 0.0;
                for (i, ai) in amps.iter().enumerate() {
                    for (j, aj) in amps.iter().enumerate() {
                        let xs = if dx1 { inner(&phis[i].1, &phis[j].1) } else { inner(&phis[i].0, &phis[j].0) };
                        s += ai * aj * xs * inner(&phis[i].0, &phis[j].0);
                    }
                }
                s.max(0.0).sqrt()
            }
        }
    }
}
