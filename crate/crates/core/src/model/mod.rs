//! Model library: reduced Hamiltonians, interaction kernels, couplings,
//! source terms, and the assembled problem.

pub mod coupling;
pub mod hamiltonian;
pub mod kernel;
pub mod source;
pub mod spec;

pub use coupling::Coupling;
pub use hamiltonian::Hamiltonian;
pub use kernel::Kernel;
pub use source::{ShapeJet, SourceProfile, SourceShape, SourceTerm};
pub use spec::{InitialSpec, ProblemSpec, TerminalSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient, integrate, second_partial, Backend, Field, Grid};
use crate::tree::{ScenarioTree, TreeField};

/// `beta_hat = (1 + beta^2) / 2`.
pub fn beta_hat(beta: f64) -> f64 {
    0.5 * (1.0 + beta * beta)
}

/// A fully specified instance of the coupled system.
#[derive(Debug, Clone)]
pub struct MfgProblem {
    pub grid: Grid,
    pub tree: ScenarioTree,
    pub hamiltonian: Hamiltonian,
    pub kernel: Kernel,
    pub coupling: Coupling,
    pub source: SourceTerm,
    beta: f64,
    beta_hat: f64,
    pub terminal_cost: Field,
    pub initial_density: Field,
}

impl MfgProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: Grid,
        tree: ScenarioTree,
        hamiltonian: Hamiltonian,
        kernel: Kernel,
        coupling: Coupling,
        source: SourceTerm,
        beta: f64,
        terminal_cost: Field,
        initial_density: Field,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Model(format!("beta = {beta} outside [0, 1]")));
        }
        if tree.steps() != grid.steps() || (tree.dt() - grid.dt()).abs() > 1e-15 * grid.dt() {
            return Err(Error::ShapeMismatch(format!(
                "tree (K = {}, dt = {}) does not match grid (K = {}, dt = {})",
                tree.steps(),
                tree.dt(),
                grid.steps(),
                grid.dt()
            )));
        }
        if !terminal_cost.grid().same_space(&grid) || !initial_density.grid().same_space(&grid) {
            return Err(Error::ShapeMismatch("boundary data not on the problem grid".into()));
        }
        if !terminal_cost.is_finite() || !initial_density.is_finite() {
            return Err(Error::NonFinite("boundary data".into()));
        }
        if initial_density.values().iter().any(|v| *v < 0.0) {
            return Err(Error::Model("initial density has negative values".into()));
        }
        let mass = integrate(&initial_density);
        if (mass - 1.0).abs() > 1e-10 {
            return Err(Error::Model(format!("initial density has mass {mass}, expected 1")));
        }
        kernel.validate(&grid)?;
        source.validate(grid.steps())?;
        Ok(Self {
            grid,
            tree,
            hamiltonian,
            kernel,
            coupling,
            source,
            beta,
            beta_hat: beta_hat(beta),
            terminal_cost,
            initial_density,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn beta_hat(&self) -> f64 {
        self.beta_hat
    }

    /// Whether the HJB and FP equations decouple: `F = 0` and `B` independent
    /// of `p`.
    pub fn is_decoupled(&self) -> bool {
        self.coupling.is_zero() && self.hamiltonian.is_p_independent()
    }

    /// `G(t_k, .)` as a field.
    pub fn source_field(&self, k: usize) -> Field {
        let t = self.grid.time(k);
        let (l, n) = (self.grid.half_width(), self.grid.dim());
        Field::from_fn(self.grid, |x| self.source.value(k, t, x, l, n))
    }

    /// `H(t_k, x, grad u; rho)` on every grid point.
    pub fn hamiltonian_field(&self, k: usize, grad_u: &[Field], rho: &Field) -> Result<Field> {
        let t = self.grid.time(k);
        let n = self.grid.dim();
        let g = self.source_field(k);
        let local = if self.coupling.is_zero() { None } else { Some(self.kernel.apply(rho)) };
        let mut out = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            let x = self.grid.point(i);
            let mut p = [0.0; 2];
            for a in 0..n {
                p[a] = grad_u[a].values()[i];
            }
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::NonFinite(format!("gradient at grid index {i}")));
            }
            let mut h = self.hamiltonian.b(t, x, p) + g.values()[i];
            if let Some(y) = &local {
                h += self.coupling.value(y.values()[i], rho.values()[i]);
            }
            out.push(h);
        }
        Field::from_values(self.grid, out)
    }

    /// `grad_p B(t_k, x, grad u)` per axis.
    pub fn drift_field(&self, k: usize, grad_u: &[Field]) -> Vec<Field> {
        let t = self.grid.time(k);
        let n = self.grid.dim();
        let mut comps = vec![Vec::with_capacity(self.grid.len()); n];
        for i in 0..self.grid.len() {
            let x = self.grid.point(i);
            let mut p = [0.0; 2];
            for a in 0..n {
                p[a] = grad_u[a].values()[i];
            }
            let v = self.hamiltonian.grad_p(t, x, p);
            for a in 0..n {
                comps[a].push(v[a]);
            }
        }
        comps.into_iter().map(|c| Field::from_raw(self.grid, c)).collect()
    }
}

/// Evaluates `B(t, x, p) + G(t, x) + F(int K(x, y) rho(y) dy, rho(x))` at the
/// grid point with flat index `at`.
pub fn hamiltonian_eval(problem: &MfgProblem, k: usize, at: usize, p: [f64; 2], rho: &Field) -> Result<f64> {
    if !(p[0].is_finite() && p[1].is_finite()) {
        return Err(Error::NonFinite("momentum argument".into()));
    }
    let grid = problem.grid;
    let t = grid.time(k);
    let x = grid.point(at);
    let mut h = problem.hamiltonian.b(t, x, p)
        + problem.source.value(k, t, x, grid.half_width(), grid.dim());
    if !problem.coupling.is_zero() {
        let y = problem.kernel.apply(rho).values()[at];
        h += problem.coupling.value(y, rho.values()[at]);
    }
    Ok(h)
}

/// Normalized periodic Gaussian density centred at `center`.
pub fn gaussian_density(grid: Grid, center: [f64; 2], sigma: f64) -> Field {
    let w = 2.0 * grid.half_width();
    let d = |a: f64, c: f64| {
        let r = a - c;
        r - w * (r / w).round()
    };
    let f = Field::from_fn(grid, |x| {
        let mut r2 = d(x[0], center[0]).powi(2);
        if grid.dim() == 2 {
            r2 += d(x[1], center[1]).powi(2);
        }
        (-r2 / (2.0 * sigma * sigma)).exp()
    });
    let m = integrate(&f);
    f.scaled(1.0 / m)
}

/// Bounds of the standing assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionBounds {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    /// Observed derivative bound over `|p| <= M1`.
    pub c_of_m1: f64,
    /// Observed derivative bound over `|p| <= M3`.
    pub c_of_m3: f64,
    /// `max{1, C(M3), M2, M3}`.
    pub m: f64,
}

/// Configured thresholds for the a-posteriori assumption check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionLimits {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Bounds built from the observed quantities.
    pub bounds: AssumptionBounds,
    pub observed_m2: f64,
    pub observed_m3: f64,
    pub kernel_pass: bool,
    pub solution_pass: bool,
}

fn lattice_probes(grid: &Grid, radius: f64) -> Vec<(f64, [f64; 2], [f64; 2])> {
    let n = grid.dim();
    let stride = (grid.points() / 8).max(1);
    let xs: Vec<[f64; 2]> = (0..grid.len())
        .filter(|&i| grid.multi_index(i).iter().take(n).all(|&j| j % stride == 0))
        .map(|i| grid.point(i))
        .collect();
    let m = 9;
    let ticks: Vec<f64> = (0..m).map(|i| -radius + 2.0 * radius * i as f64 / (m - 1) as f64).collect();
    let mut ps = Vec::new();
    for &a in &ticks {
        if n == 1 {
            ps.push([a, 0.0]);
        } else {
            for &b in &ticks {
                if a * a + b * b <= radius * radius * (1.0 + 1e-12) {
                    ps.push([a, b]);
                }
            }
        }
    }
    let times = [0.0, 0.5 * grid.horizon(), grid.horizon()];
    let mut out = Vec::with_capacity(times.len() * xs.len() * ps.len());
    for &t in &times {
        for &x in &xs {
            for &p in &ps {
                out.push((t, x, p));
            }
        }
    }
    out
}

/// `||f||_{W^{k,inf}}` as the sum of the sup norms of the derivatives up to
/// order `order` (at most 2).
pub fn sobolev_sup(f: &Field, order: usize) -> f64 {
    let mut s = f.max_abs();
    if order >= 1 {
        s += gradient(f, Backend::Central).iter().map(|d| d.max_abs()).sum::<f64>();
    }
    if order >= 2 {
        let n = f.grid().dim();
        for j in 0..n {
            for k in 0..n {
                s += second_partial(f, j, k, Backend::Central).max_abs();
            }
        }
    }
    s
}

/// Samples the derivative bound of the Hamiltonian, the kernel norm, and the
/// solution norms, and compares them with the configured limits.
pub fn validate_assumptions(
    problem: &MfgProblem,
    u: &TreeField<Field>,
    rho: &TreeField<Field>,
    limits: AssumptionLimits,
) -> AssumptionReport {
    let grid = &problem.grid;
    let n = grid.dim();
    let c_of_m1 = problem.hamiltonian.derivative_bound(&lattice_probes(grid, limits.m1), n);
    let c_of_m3 = problem.hamiltonian.derivative_bound(&lattice_probes(grid, limits.m3), n);
    let observed_m2 = problem.kernel.l2_norm(grid);
    let observed_m3 = sup_over_tree(&problem.tree, u, rho);
    let m = 1f64.max(c_of_m3).max(limits.m2).max(limits.m3);
    AssumptionReport {
        bounds: AssumptionBounds { m1: limits.m1, m2: limits.m2, m3: limits.m3, c_of_m1, c_of_m3, m },
        observed_m2,
        observed_m3,
        kernel_pass: observed_m2 <= limits.m2,
        solution_pass: observed_m3 <= limits.m3,
    }
}

fn sup_over_tree(tree: &ScenarioTree, u: &TreeField<Field>, rho: &TreeField<Field>) -> f64 {
    let mut worst_u = 0.0f64;
    let mut worst_rho = 0.0f64;
    for id in 0..tree.len() {
        worst_u = worst_u.max(sobolev_sup(u.get(id), 2));
        worst_rho = worst_rho.max(sobolev_sup(rho.get(id), 1));
    }
    worst_u + worst_rho
}
