//! Tree-based solver for the coupled forward FP / backward HJB system.
//!
//! The forward equation is advanced per node by an explicit conservative
//! drift step, an implicit diffusion solve with `beta_hat`, and a stochastic
//! transport `rho -/+ beta sqrt(dt) d1 rho` onto the two children. The
//! backward equation uses the exact two-point martingale decomposition of the
//! children values. The two are coupled by damped Picard sweeps.

pub mod transport;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use transport::{courant_number, flux_divergence, flux_divergence_vjp, TransportScheme};

use crate::error::{Error, Result};
use crate::grid::{gradient, norms_difference, partial, spectral, Backend, Field};
use crate::model::MfgProblem;
use crate::tree::{Children, ScenarioTree, TreeField, TreeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffusionScheme {
    #[default]
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub picard_max_iters: usize,
    pub picard_tol: f64,
    pub damping: f64,
    pub transport_scheme: TransportScheme,
    pub diffusion_scheme: DiffusionScheme,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            picard_max_iters: 60,
            picard_tol: 1e-10,
            damping: 0.5,
            transport_scheme: TransportScheme::Upwind,
            diffusion_scheme: DiffusionScheme::Implicit,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.picard_tol > 0.0) {
            return Err(Error::Config(format!("picard_tol = {} must be positive", self.picard_tol)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping = {} outside (0, 1]", self.damping)));
        }
        if self.picard_max_iters == 0 {
            return Err(Error::Config("picard_max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-node density, value, and martingale correction.
#[derive(Debug, Clone)]
pub struct MfgSolution {
    pub rho: TreeField<Field>,
    pub u: TreeField<Field>,
    /// Correction process along `e1`.
    pub big_u: TreeField<Field>,
    pub picard_residuals: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

fn check_finite(f: &Field, what: &str, id: usize) -> Result<()> {
    if f.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} at node {id}")))
    }
}

fn require_noise_compatible(problem: &MfgProblem) -> Result<()> {
    if problem.tree.kind() == TreeKind::Degenerate && problem.beta() != 0.0 {
        return Err(Error::Precondition("a degenerate tree carries no noise; it needs beta = 0".into()));
    }
    Ok(())
}

/// Drift coefficient `a = grad_p B(t_k, x, grad u)` used by the FP step.
pub fn fp_drift(problem: &MfgProblem, k: usize, u: &Field) -> Vec<Field> {
    if problem.hamiltonian.is_p_independent() {
        return vec![Field::zeros(problem.grid); problem.grid.dim()];
    }
    problem.drift_field(k, &gradient(u, Backend::Central))
}

/// `(I - dt beta_hat lap)^{-1} (rho + dt div(rho a))`.
pub fn fp_deterministic_step(problem: &MfgProblem, rho: &Field, a: &[Field], scheme: TransportScheme) -> Field {
    let dt = problem.grid.dt();
    let mut rhs = rho.clone();
    rhs.axpy(dt, &flux_divergence(rho, a, scheme));
    spectral::implicit_diffusion_solve(&rhs, dt * problem.beta_hat())
}

/// Child values `rho* -/+ beta sqrt(dt) d1 rho*` for the `+` and `-` moves.
pub fn fp_noise_split(problem: &MfgProblem, star: &Field) -> (Field, Field) {
    let s = problem.beta() * problem.tree.increment();
    if s == 0.0 {
        return (star.clone(), star.clone());
    }
    let d1 = partial(star, 0, Backend::Central);
    (Field::lincomb(star, 1.0, &d1, -s), Field::lincomb(star, 1.0, &d1, s))
}

/// Forward sweep of the FP equation for a given value function on the tree.
pub fn solve_fp_forward(
    problem: &MfgProblem,
    u: &TreeField<Field>,
    config: &SolverConfig,
    warnings: &mut Vec<String>,
) -> Result<TreeField<Field>> {
    require_noise_compatible(problem)?;
    let tree = &problem.tree;
    if u.len() != tree.len() {
        return Err(Error::ShapeMismatch("value function not defined on every node".into()));
    }
    let mut rho: Vec<Option<Field>> = vec![None; tree.len()];
    rho[0] = Some(problem.initial_density.clone());
    let mut cfl_reported = false;
    for k in 0..tree.steps() {
        let level = tree.level(k);
        let base = level[0];
        let steps: Vec<(Field, Field, f64)> = level
            .par_iter()
            .map(|&id| {
                let r = rho[id].as_ref().expect("density set before its children");
                let a = fp_drift(problem, k, u.get(id));
                let cfl = courant_number(&a, problem.grid.dt());
                let star = fp_deterministic_step(problem, r, &a, config.transport_scheme);
                let (p, m) = fp_noise_split(problem, &star);
                (p, m, cfl)
            })
            .collect();
        let worst = steps.iter().fold(0.0f64, |m, s| m.max(s.2));
        if config.transport_scheme == TransportScheme::Upwind && worst > 1.0 && !cfl_reported {
            warnings.push(format!("upwind Courant number {worst:.3} exceeds 1 at step {k}"));
            cfl_reported = true;
        }
        let next: Vec<(usize, Field)> = tree
            .level(k + 1)
            .par_iter()
            .map(|&c| {
                let mut acc = Field::zeros(problem.grid);
                for &(src, sign, w) in tree.incoming(c) {
                    let s = &steps[src - base];
                    acc.axpy(w, if sign >= 0 { &s.0 } else { &s.1 });
                }
                (c, acc)
            })
            .collect();
        for (c, f) in next {
            check_finite(&f, "density", c)?;
            rho[c] = Some(f);
        }
    }
    TreeField::from_vec(tree, rho.into_iter().map(|r| r.expect("every node visited")).collect())
}

/// Backward induction for the HJB equation; `H` is evaluated with the
/// gradient of `u_prev` (frozen coefficients).
pub fn solve_hjb_backward(
    problem: &MfgProblem,
    rho: &TreeField<Field>,
    u_prev: &TreeField<Field>,
) -> Result<(TreeField<Field>, TreeField<Field>)> {
    require_noise_compatible(problem)?;
    let tree = &problem.tree;
    if rho.len() != tree.len() || u_prev.len() != tree.len() {
        return Err(Error::ShapeMismatch("HJB inputs not defined on every node".into()));
    }
    let grid = problem.grid;
    let dt = grid.dt();
    let zero = Field::zeros(grid);
    let mut u: Vec<Field> = vec![zero.clone(); tree.len()];
    let mut big_u: Vec<Field> = vec![zero; tree.len()];
    for &leaf in tree.leaves() {
        u[leaf] = problem.terminal_cost.clone();
    }
    for k in (0..tree.steps()).rev() {
        let level = tree.level(k);
        let out: Vec<Result<(usize, Field, Field)>> = level
            .par_iter()
            .map(|&id| {
                let (m, mart) = match tree.node(id).children {
                    Children::Binary { plus, minus } => {
                        (u[plus].zip_map(&u[minus], |a, b| 0.5 * (a + b)), {
                            let s = 2.0 * dt.sqrt();
                            u[plus].zip_map(&u[minus], |a, b| (a - b) / s)
                        })
                    }
                    Children::Single(c) => (u[c].clone(), Field::zeros(grid)),
                    Children::Leaf => unreachable!("interior depth"),
                };
                let grad = gradient(u_prev.get(id), Backend::Central);
                let h = problem.hamiltonian_field(k, &grad, rho.get(id))?;
                let mut rhs = m;
                rhs.axpy(dt, &h);
                if problem.beta() != 0.0 {
                    rhs.axpy(dt * problem.beta(), &partial(&mart, 0, Backend::Central));
                }
                let value = spectral::implicit_diffusion_solve(&rhs, dt * problem.beta_hat());
                check_finite(&value, "value function", id)?;
                Ok((id, value, mart))
            })
            .collect();
        for r in out {
            let (id, value, mart) = r?;
            u[id] = value;
            big_u[id] = mart;
        }
    }
    Ok((TreeField::from_vec(tree, u)?, TreeField::from_vec(tree, big_u)?))
}

fn relax(new: &TreeField<Field>, old: &TreeField<Field>, gamma: f64) -> TreeField<Field> {
    let data: Vec<Field> =
        new.iter().zip(old.iter()).map(|(a, b)| Field::lincomb(a, gamma, b, 1.0 - gamma)).collect();
    TreeField::from_vec_unchecked(data)
}

/// Damped Picard iteration starting from `u = h` on every node.
pub fn solve_mfg(problem: &MfgProblem, config: &SolverConfig) -> Result<MfgSolution> {
    let u0 = TreeField::filled(&problem.tree, problem.terminal_cost.clone());
    solve_mfg_from(problem, config, u0)
}

/// Damped Picard iteration from a given initial value function.
///
/// The first sweep is taken undamped; later sweeps relax `u` and `U` with
/// `damping`. The returned iterate is the one with the smallest residual.
pub fn solve_mfg_from(problem: &MfgProblem, config: &SolverConfig, u_init: TreeField<Field>) -> Result<MfgSolution> {
    config.validate()?;
    require_noise_compatible(problem)?;
    let tree: &ScenarioTree = &problem.tree;
    let mut warnings = Vec::new();
    let mut u = u_init;
    let mut big_u = TreeField::filled(tree, Field::zeros(problem.grid));
    let mut rho_old = TreeField::filled(tree, problem.initial_density.clone());
    let mut residuals = Vec::new();
    let mut best: Option<(f64, TreeField<Field>, TreeField<Field>, TreeField<Field>)> = None;
    let mut converged = false;
    for sweep in 0..config.picard_max_iters {
        let rho = solve_fp_forward(problem, &u, config, &mut warnings)?;
        let (u_new, big_u_new) = solve_hjb_backward(problem, &rho, &u)?;
        let gamma = if sweep == 0 { 1.0 } else { config.damping };
        let u_next = relax(&u_new, &u, gamma);
        let big_u_next = relax(&big_u_new, &big_u, gamma);
        let res = norms_difference(&u_next, &u, tree)? + norms_difference(&rho, &rho_old, tree)?;
        if !res.is_finite() {
            return Err(Error::NonFinite(format!("Picard residual at sweep {}", sweep + 1)));
        }
        residuals.push(res);
        u = u_next;
        big_u = big_u_next;
        rho_old = rho;
        if best.as_ref().is_none_or(|b| res <= b.0) {
            best = Some((res, rho_old.clone(), u.clone(), big_u.clone()));
        }
        if res < config.picard_tol {
            converged = true;
            break;
        }
    }
    let (_, rho, u, big_u) = best.expect("at least one sweep");
    if !converged {
        warnings.push(format!(
            "Picard iteration did not reach tolerance {} in {} sweeps",
            config.picard_tol, config.picard_max_iters
        ));
    }
    Ok(MfgSolution { rho, u, big_u, picard_residuals: residuals, converged, warnings })
}
