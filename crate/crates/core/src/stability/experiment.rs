//! Twin experiments for the Lipschitz and Hölder stability estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{expected_norm_at_depth, integrate, sobolev_norms_window, Backend, Field};
use crate::model::MfgProblem;
use crate::solver::{solve_mfg, MfgSolution, SolverConfig};
use crate::tree::TreeField;

/// Direction of a data perturbation: `h -> h + delta terminal`,
/// `rho0 -> rho0 + delta initial`.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub name: String,
    pub terminal: Field,
    /// Must have zero mass.
    pub initial: Field,
}

impl Perturbation {
    /// Mass-free initial shape `rho0 (cos(pi m x1 / L) - c)` and terminal
    /// shape `cos(pi m x1 / L)`; nonnegative densities stay nonnegative for
    /// `|delta| <= 1/2`.
    pub fn smooth(problem: &MfgProblem, m: usize) -> Self {
        let grid = problem.grid;
        let k = std::f64::consts::PI * m as f64 / grid.half_width();
        let wave = Field::from_fn(grid, |x| (k * x[0]).cos());
        let weighted = problem.initial_density.mul(&wave);
        let c = integrate(&weighted);
        let mut initial = weighted;
        initial.axpy(-c, &problem.initial_density);
        Self { name: format!("smooth_{m}"), terminal: wave, initial }
    }

    /// Pure density perturbation `a cos(pi m x1 / L)` with `||.||_{H^1} = level`.
    pub fn density_mode(problem: &MfgProblem, m: usize, level: f64) -> Self {
        let grid = problem.grid;
        let k = std::f64::consts::PI * m as f64 / grid.half_width();
        let wave = Field::from_fn(grid, |x| (k * x[0]).cos());
        let norm = crate::grid::inner(&wave, &wave) * (1.0 + k * k);
        let initial = wave.scaled(level / norm.sqrt());
        Self { name: format!("mode_{m}"), terminal: Field::zeros(grid), initial }
    }
}

/// The problem with perturbed boundary data.
pub fn perturbed_problem(problem: &MfgProblem, p: &Perturbation, delta: f64) -> Result<MfgProblem> {
    let h = Field::lincomb(&problem.terminal_cost, 1.0, &p.terminal, delta);
    let rho0 = Field::lincomb(&problem.initial_density, 1.0, &p.initial, delta);
    if rho0.values().iter().any(|v| *v < 0.0) {
        return Err(Error::Precondition(format!("perturbation '{}' at delta = {delta} makes rho0 negative", p.name)));
    }
    MfgProblem::new(
        problem.grid,
        problem.tree.clone(),
        problem.hamiltonian.clone(),
        problem.kernel.clone(),
        problem.coupling.clone(),
        problem.source.clone(),
        problem.beta(),
        h,
        rho0,
    )
}

/// Both sides of the Lipschitz estimate for one perturbed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRun {
    pub id: usize,
    pub perturbation: String,
    pub delta: f64,
    pub lhs_u: f64,
    pub lhs_rho: f64,
    pub lhs: f64,
    pub rhs_u_terminal: f64,
    pub rhs_rho_terminal: f64,
    pub rhs_rho_initial: f64,
    pub rhs: f64,
    /// `lhs / rhs`, or 0 when both vanish.
    pub ratio: f64,
    pub converged: bool,
}

/// Result of a stability experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityFit {
    pub runs: Vec<LipschitzRun>,
    /// Runs left out because a solver did not converge.
    pub excluded: Vec<usize>,
    pub lhs_norm: f64,
    pub rhs_norm: f64,
    /// Largest `lhs / rhs` over the included runs.
    pub fitted_c: f64,
    /// Largest over smallest ratio among the included runs.
    pub ratio_spread: f64,
    /// `(delta, largest ratio at that delta)`, in order of first appearance.
    pub c_by_delta: Vec<(f64, f64)>,
    /// Largest over smallest entry of `c_by_delta`.
    pub delta_spread: f64,
    pub epsilon: Option<f64>,
    pub fitted_eta: Option<f64>,
    pub predicted_eta: Option<f64>,
    pub mu0_used: Option<f64>,
}

fn difference(a: &TreeField<Field>, b: &TreeField<Field>) -> TreeField<Field> {
    TreeField::difference(a, b)
}

/// `||f||_{L^2(Omega; X)}` at depth `d`, with `X = H^1` or `L^2`.
fn mean_square_norm(f: &TreeField<Field>, problem: &MfgProblem, d: usize, h1: bool) -> f64 {
    problem
        .tree
        .expectation_at_depth(d, |id| {
            let g = f.get(id);
            let l2 = crate::grid::inner(g, g);
            if h1 {
                l2 + crate::grid::gradient(g, Backend::Central).iter().map(|x| crate::grid::inner(x, x)).sum::<f64>()
            } else {
                l2
            }
        })
        .sqrt()
}

fn measure(
    problem: &MfgProblem,
    base: &MfgSolution,
    other: &MfgSolution,
    id: usize,
    name: &str,
    delta: f64,
) -> Result<LipschitzRun> {
    let tree = &problem.tree;
    let kk = tree.steps();
    let du = difference(&base.u, &other.u);
    let drho = difference(&base.rho, &other.rho);
    let lhs_u = sobolev_norms_window(&du, tree, 0, kk, Backend::Central)?.l2_time_h1;
    let lhs_rho = sobolev_norms_window(&drho, tree, 0, kk, Backend::Central)?.l2_time_h1;
    let rhs_u_terminal = expected_norm_at_depth(&du, tree, kk, true, Backend::Central);
    let rhs_rho_terminal = expected_norm_at_depth(&drho, tree, kk, false, Backend::Central);
    let rhs_rho_initial = expected_norm_at_depth(&drho, tree, 0, true, Backend::Central);
    let lhs = lhs_u + lhs_rho;
    let rhs = rhs_u_terminal + rhs_rho_terminal + rhs_rho_initial;
    let ratio = if rhs == 0.0 && lhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(LipschitzRun {
        id,
        perturbation: name.to_string(),
        delta,
        lhs_u,
        lhs_rho,
        lhs,
        rhs_u_terminal,
        rhs_rho_terminal,
        rhs_rho_initial,
        rhs,
        ratio,
        converged: base.converged && other.converged,
    })
}

fn summarize(runs: Vec<LipschitzRun>) -> StabilityFit {
    let excluded: Vec<usize> = runs.iter().filter(|r| !r.converged).map(|r| r.id).collect();
    let kept: Vec<&LipschitzRun> = runs.iter().filter(|r| r.converged && r.rhs > 0.0).collect();
    let fitted_c = kept.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let min = kept.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let ratio_spread = if kept.is_empty() || min == 0.0 { f64::NAN } else { fitted_c / min };
    let mut c_by_delta: Vec<(f64, f64)> = Vec::new();
    for r in &kept {
        match c_by_delta.iter_mut().find(|(d, _)| *d == r.delta) {
            Some(e) => e.1 = e.1.max(r.ratio),
            None => c_by_delta.push((r.delta, r.ratio)),
        }
    }
    let cmax = c_by_delta.iter().map(|e| e.1).fold(0.0, f64::max);
    let cmin = c_by_delta.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let delta_spread = if c_by_delta.is_empty() || cmin == 0.0 { f64::NAN } else { cmax / cmin };
    let lhs_norm = kept.iter().map(|r| r.lhs).fold(0.0, f64::max);
    let rhs_norm = kept.iter().map(|r| r.rhs).fold(0.0, f64::max);
    StabilityFit {
        runs,
        excluded,
        lhs_norm,
        rhs_norm,
        fitted_c,
        ratio_spread,
        c_by_delta,
        delta_spread,
        epsilon: None,
        fitted_eta: None,
        predicted_eta: None,
        mu0_used: None,
    }
}

/// Solves the base problem and one perturbed problem per
/// `(perturbation, delta)` pair, concurrently, and compares both sides of
/// the three-measurement estimate.
pub fn lipschitz_experiment(
    problem: &MfgProblem,
    config: &SolverConfig,
    family: &[Perturbation],
    deltas: &[f64],
) -> Result<StabilityFit> {
    let base = solve_mfg(problem, config)?;
    let jobs: Vec<(usize, &Perturbation, f64)> = family
        .iter()
        .flat_map(|p| deltas.iter().map(move |&d| (p, d)))
        .enumerate()
        .map(|(i, (p, d))| (i, p, d))
        .collect();
    let runs: Vec<LipschitzRun> = jobs
        .par_iter()
        .map(|&(id, p, delta)| {
            let other = solve_mfg(&perturbed_problem(problem, p, delta)?, config)?;
            measure(problem, &base, &other, id, &p.name, delta)
        })
        .collect::<Result<_>>()?;
    Ok(summarize(runs))
}

/// `((2 + eps)^mu0 - 2^mu0) / ((T + 2)^mu0 - 2^mu0)`, evaluated in log space.
pub fn predicted_eta(epsilon: f64, horizon: f64, mu0: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < horizon) {
        return Err(Error::Precondition(format!("epsilon = {epsilon} outside (0, {horizon})")));
    }
    if !(mu0 > 0.0) {
        return Err(Error::Precondition(format!("mu0 = {mu0} must be positive")));
    }
    // ln(b^mu - 2^mu) = mu ln b + ln(-expm1(mu ln(2 / b)))
    let ln_gap = |b: f64| mu0 * b.ln() + (-(mu0 * (2.0 / b).ln()).exp_m1()).ln();
    Ok((ln_gap(2.0 + epsilon) - ln_gap(2.0 + horizon)).exp())
}

/// Hölder experiment: `family` holds perturbations of fixed initial size
/// whose terminal footprints differ; `lhs` is measured on `(epsilon, T)`
/// (snapped to the time grid) and regressed against the terminal data.
pub fn holder_experiment(
    problem: &MfgProblem,
    config: &SolverConfig,
    epsilon: f64,
    family: &[Perturbation],
    mu0: f64,
) -> Result<StabilityFit> {
    let grid = problem.grid;
    let horizon = grid.horizon();
    if !(epsilon > 0.0 && epsilon < horizon) {
        return Err(Error::Precondition(format!("epsilon = {epsilon} outside (0, {horizon})")));
    }
    let kk = grid.steps();
    let k_eps = ((epsilon / grid.dt()).round() as usize).clamp(1, kk - 1);
    let eps_used = grid.time(k_eps);
    let predicted = predicted_eta(eps_used, horizon, mu0)?;
    let base = solve_mfg(problem, config)?;
    let tree = &problem.tree;
    let runs: Vec<LipschitzRun> = family
        .par_iter()
        .enumerate()
        .map(|(id, p)| {
            let other = solve_mfg(&perturbed_problem(problem, p, 1.0)?, config)?;
            let du = difference(&base.u, &other.u);
            let drho = difference(&base.rho, &other.rho);
            let lhs_u = sobolev_norms_window(&du, tree, k_eps, kk, Backend::Central)?.l2_time_h1;
            let lhs_rho = sobolev_norms_window(&drho, tree, k_eps, kk, Backend::Central)?.l2_time_h1;
            let rhs_u_terminal = mean_square_norm(&du, problem, kk, true);
            let rhs_rho_terminal = mean_square_norm(&drho, problem, kk, false);
            let rhs_rho_initial = mean_square_norm(&drho, problem, 0, true);
            let lhs = lhs_u + lhs_rho;
            let data = rhs_u_terminal + rhs_rho_terminal;
            Ok(LipschitzRun {
                id,
                perturbation: p.name.clone(),
                delta: 1.0,
                lhs_u,
                lhs_rho,
                lhs,
                rhs_u_terminal,
                rhs_rho_terminal,
                rhs_rho_initial,
                rhs: data,
                ratio: if data == 0.0 && lhs == 0.0 { 0.0 } else { lhs / data },
                converged: base.converged && other.converged,
            })
        })
        .collect::<Result<_>>()?;
    let kept: Vec<(f64, f64)> = runs
        .iter()
        .filter(|r| r.converged && r.lhs > 0.0 && r.rhs > 0.0)
        .map(|r| (r.rhs.ln(), r.lhs.ln()))
        .collect();
    let mut fit = summarize(runs);
    fit.epsilon = Some(eps_used);
    fit.predicted_eta = Some(predicted);
    fit.mu0_used = Some(mu0);
    fit.fitted_eta = least_squares_slope(&kept);
    Ok(fit)
}

fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
