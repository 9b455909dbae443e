//! Inverse source problem: recover `r(t, x')` in `G = r R` from the terminal
//! density on `G = (0, 1) x box'` and the lateral Cauchy traces on
//! `x1 in {0, 1}`.

pub mod adjoint;
pub mod cutoff;
pub mod observe;
pub mod reconstruct;
pub mod transform;

pub use adjoint::{fixed_point_adjoint, fp_vjp, hjb_vjp, AdjointState};
pub use cutoff::{cutoff_chi, cutoff_chi_t, CutoffParams};
pub use observe::{add_noise, observe, CauchyTraceSet, NodeTraces, NoiseSpec, ObservationScales, Observations, TRACE_NAMES};
pub use reconstruct::{
    alpha_sweep, compare_reconstructions, discrepancy_alpha, noise_floor, random_guess, reconstruct_source, relative_error, uniqueness_certificate, AlphaChoice, IterationRecord, Misfit,
    ReconstructOptions, ReconstructionResult, UniquenessCertificate,
};
pub use transform::{poincare_random_check, verify_theorem3_transformations, PoincareCheck, PoincareReport, TransformationReport};

use serde::{Deserialize, Serialize};

use crate::carleman::CarlemanWeight;
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::model::{MfgProblem, SourceProfile, SourceTerm};
use crate::solver::{solve_mfg_from, MfgSolution, SolverConfig};
use crate::tree::TreeField;

/// Smallest admissible `inf_G |R|`.
pub const SHAPE_FLOOR: f64 = 1e-6;

/// Carleman weighting `theta^2 / theta(T)^2` of the trace misfit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisfitWeight {
    pub lambda: f64,
    pub mu: f64,
}

/// The base problem with source `r R`, the observation geometry, and the
/// cutoff of the uniqueness argument.
#[derive(Debug, Clone)]
pub struct InversionProblem {
    /// `source.shape` is `R`; `source.r` is ignored.
    pub base: MfgProblem,
    pub cutoff: CutoffParams,
    /// Trace components included in the misfit, in [`TRACE_NAMES`] order.
    pub trace_mask: [bool; 6],
    weight: Option<CarlemanWeight>,
    faces: [usize; 2],
    region: Vec<f64>,
}

impl InversionProblem {
    pub fn new(base: MfgProblem, cutoff: CutoffParams, weight: Option<MisfitWeight>) -> Result<Self> {
        let grid = base.grid;
        cutoff.validate(grid.horizon())?;
        let face = |x: f64| {
            grid.index_of(x)
                .ok_or_else(|| Error::Precondition(format!("face x1 = {x} is not a grid point of the box")))
        };
        let faces = [face(0.0)?, face(1.0)?];
        if faces[1] < faces[0] + 3 {
            return Err(Error::Precondition("the slab (0, 1) needs at least two interior grid points".into()));
        }
        let weight = match weight {
            Some(w) if w.lambda > 0.0 => Some(CarlemanWeight::new(w.lambda, w.mu, grid.horizon())?),
            _ => None,
        };
        let n = grid.points();
        let region: Vec<f64> = (0..grid.len())
            .map(|p| {
                let i = grid.multi_index(p)[0];
                let c = if i == faces[0] || i == faces[1] {
                    0.5
                } else if i > faces[0] && i < faces[1] {
                    1.0
                } else {
                    0.0
                };
                c * grid.cell_volume()
            })
            .collect();
        debug_assert_eq!(region.len(), if grid.dim() == 1 { n } else { n * n });
        let ip = Self { base, cutoff, trace_mask: [true; 6], weight, faces, region };
        let floor = ip.shape_floor();
        if floor < SHAPE_FLOOR {
            return Err(Error::Precondition(format!("inf over G of |R| is {floor:.3e}, below {SHAPE_FLOOR:e}")));
        }
        Ok(ip)
    }

    /// `inf |R(t_k, x)|` over grid points of the closed slab.
    pub fn shape_floor(&self) -> f64 {
        let g = self.base.grid;
        let samples = (0..=g.steps())
            .flat_map(|k| (0..g.len()).filter(|&p| self.region[p] > 0.0).map(move |p| (g.time(k), g.point(p))));
        self.base.source.min_abs_shape(samples, g.dim())
    }

    /// Number of transverse points carrying an unknown per step.
    pub fn transverse(&self) -> usize {
        if self.base.grid.dim() == 1 {
            1
        } else {
            self.base.grid.points()
        }
    }

    /// Length of the unknown vector `K x transverse`.
    pub fn unknowns(&self) -> usize {
        self.base.grid.steps() * self.transverse()
    }

    /// Quadrature weight on the transverse grid.
    pub fn transverse_weight(&self) -> f64 {
        if self.base.grid.dim() == 1 {
            1.0
        } else {
            self.base.grid.spacing()
        }
    }

    /// Trapezoid weight per point of `G` (times the cell volume); zero outside.
    pub fn region_weights(&self) -> &[f64] {
        &self.region
    }

    pub fn face_indices(&self) -> [usize; 2] {
        self.faces
    }

    /// Trapezoid time weight of depth `d`, times the normalized Carleman
    /// weight when one is set.
    pub fn trace_time_weight(&self, d: usize) -> f64 {
        let g = self.base.grid;
        let end = d == 0 || d == g.steps();
        let w = if end { 0.5 * g.dt() } else { g.dt() };
        match &self.weight {
            Some(cw) => w * cw.normalized_theta_sq(g.time(d)),
            None => w,
        }
    }

    /// Flat indices and weights of the `x1` stencil of order 0, 1 or 2 at
    /// face `f`, transverse index `j`.
    pub fn stencil(&self, f: usize, j: usize, order: usize) -> ([usize; 3], [f64; 3]) {
        let g = self.base.grid;
        let n = g.points();
        let i = self.faces[f];
        let flat = |a: usize| if g.dim() == 1 { a } else { a * n + j };
        let idx = [flat((i + n - 1) % n), flat(i), flat((i + 1) % n)];
        let h = g.spacing();
        let coef = match order {
            0 => [0.0, 1.0, 0.0],
            1 => [-0.5 / h, 0.0, 0.5 / h],
            _ => [1.0 / (h * h), -2.0 / (h * h), 1.0 / (h * h)],
        };
        (idx, coef)
    }

    /// The base problem with `r` as a `K x transverse` table.
    pub fn problem_with(&self, r: &[f64]) -> Result<MfgProblem> {
        if r.len() != self.unknowns() {
            return Err(Error::ShapeMismatch(format!("source has {} values, expected {}", r.len(), self.unknowns())));
        }
        let mut p = self.base.clone();
        p.source = SourceTerm {
            r: SourceProfile::Table { transverse: self.transverse(), values: r.to_vec() },
            shape: self.base.source.shape.clone(),
        };
        Ok(p)
    }

    /// `R(t_k, .)` on the grid.
    pub fn shape_field(&self, k: usize) -> Field {
        let g = self.base.grid;
        let t = g.time(k);
        Field::from_fn(g, |x| self.base.source.shape.value(t, x, g.dim()))
    }

    /// Samples a profile on the unknown grid: step midpoints in time and
    /// transverse grid points.
    pub fn sample_profile(&self, profile: &SourceProfile) -> Vec<f64> {
        let g = self.base.grid;
        let nt = self.transverse();
        let mut out = Vec::with_capacity(self.unknowns());
        for k in 0..g.steps() {
            let t = g.time(k) + 0.5 * g.dt();
            for j in 0..nt {
                let x2 = if nt == 1 { 0.0 } else { g.coord(j) };
                out.push(profile.value(k, t, x2, g.half_width(), g.dim()));
            }
        }
        out
    }

    /// `||r||^2_{L^2(0,T; H^1(x'))}` on the unknown grid; the gradient part
    /// is absent in one dimension.
    pub fn source_norm_sq(&self, r: &[f64]) -> f64 {
        self.source_norm_sq_from(r, 0)
    }

    /// The same norm restricted to steps `k >= from`.
    pub fn source_norm_sq_from(&self, r: &[f64], from: usize) -> f64 {
        let g = self.base.grid;
        let nt = self.transverse();
        let tw = self.transverse_weight();
        let mut s = crate::numerics::NeumaierSum::new();
        for k in from..g.steps() {
            for j in 0..nt {
                let v = r[k * nt + j];
                s.add(g.dt() * tw * v * v);
                if nt > 1 {
                    let d = (r[k * nt + (j + 1) % nt] - v) / g.spacing();
                    s.add(g.dt() * tw * d * d);
                }
            }
        }
        s.total()
    }

    /// Gradient of [`Self::source_norm_sq`].
    pub fn source_norm_sq_grad(&self, r: &[f64]) -> Vec<f64> {
        let g = self.base.grid;
        let nt = self.transverse();
        let tw = self.transverse_weight();
        let mut out = vec![0.0; r.len()];
        for k in 0..g.steps() {
            for j in 0..nt {
                let a = k * nt + j;
                out[a] += 2.0 * g.dt() * tw * r[a];
                if nt > 1 {
                    let b = k * nt + (j + 1) % nt;
                    let d = (r[b] - r[a]) / g.spacing();
                    let c = 2.0 * g.dt() * tw * d / g.spacing();
                    out[b] += c;
                    out[a] -= c;
                }
            }
        }
        out
    }

    /// Converged coupled solve with source `r R`, optionally warm-started.
    pub fn solve(&self, r: &[f64], config: &SolverConfig, warm: Option<&TreeField<Field>>) -> Result<MfgSolution> {
        let p = self.problem_with(r)?;
        let start = warm.cloned().unwrap_or_else(|| TreeField::filled(&p.tree, p.terminal_cost.clone()));
        let sol = solve_mfg_from(&p, config, start)?;
        if !sol.converged {
            let last = sol.picard_residuals.last().copied().unwrap_or(f64::NAN);
            return Err(Error::Solver(format!(
                "Picard iteration stopped at residual {last:.3e} above tolerance {}",
                config.picard_tol
            )));
        }
        Ok(sol)
    }
}

/// Solver settings used by the inversion: central transport keeps the
/// forward map differentiable, and the fixed point is resolved tightly.
pub fn inversion_solver_config() -> SolverConfig {
    SolverConfig {
        picard_max_iters: 400,
        picard_tol: 1e-12,
        damping: 0.5,
        transport_scheme: crate::solver::TransportScheme::Central,
        ..SolverConfig::default()
    }
}

#[cfg(test)]
mod tests;
