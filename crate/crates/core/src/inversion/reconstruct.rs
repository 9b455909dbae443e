//! Tikhonov-regularized least squares for `r` with adjoint gradients and
//! L-BFGS descent.

use std::sync::{Arc, Mutex};

use argmin::core::observers::{Observe, ObserverMode};
use argmin::core::{CostFunction, Executor, Gradient, IterState, State, TerminationReason, KV};
use argmin::solver::linesearch::condition::ArmijoCondition;
use argmin::solver::linesearch::BacktrackingLineSearch;
use argmin::solver::quasinewton::LBFGS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adjoint::fixed_point_adjoint;
use super::observe::{component, node_traces, Observations};
use super::{inversion_solver_config, InversionProblem};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::numerics::NeumaierSum;
use crate::solver::{MfgSolution, SolverConfig};
use crate::tree::TreeField;

/// Misfit split `total = data + alpha ||r||^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Misfit {
    pub total: f64,
    pub data: f64,
    pub regularization: f64,
}

/// `1/2` weighted squared residuals and their cotangents with respect to
/// the density and the value function on every node.
pub(crate) fn data_misfit(
    ip: &InversionProblem,
    obs: &Observations,
    sol: &MfgSolution,
) -> (f64, TreeField<Field>, TreeField<Field>) {
    let tree = &ip.base.tree;
    let grid = ip.base.grid;
    let wg = ip.region_weights();
    let mut j_rho: Vec<Vec<f64>> = vec![vec![0.0; grid.len()]; tree.len()];
    let mut j_u: Vec<Vec<f64>> = vec![vec![0.0; grid.len()]; tree.len()];
    let mut total = NeumaierSum::new();
    let st2 = obs.scales.terminal * obs.scales.terminal;
    for (l, &leaf) in tree.leaves().iter().enumerate() {
        let p = tree.node(leaf).prob;
        let model = sol.rho.get(leaf).values();
        let data = obs.terminal[l].values();
        for i in 0..grid.len() {
            if wg[i] > 0.0 {
                let w = p * wg[i] / st2;
                let res = model[i] - data[i];
                total.add(0.5 * w * res * res);
                j_rho[leaf][i] += w * res;
            }
        }
    }
    let nt = ip.transverse();
    let tw = ip.transverse_weight();
    for id in 0..tree.len() {
        let node = tree.node(id);
        let base = ip.trace_time_weight(node.depth) * node.prob * tw;
        let model = node_traces(ip, sol.rho.get(id), sol.u.get(id));
        let data = &obs.traces.nodes[id].values;
        for f in 0..2 {
            for c in 0..6 {
                if !ip.trace_mask[c] {
                    continue;
                }
                let (is_rho, order) = component(c);
                let s = obs.scales.traces[c];
                let w = base / (s * s);
                for j in 0..nt {
                    let k = (f * 6 + c) * nt + j;
                    let res = model[k] - data[k];
                    total.add(0.5 * w * res * res);
                    let (idx, coef) = ip.stencil(f, j, order);
                    let target = if is_rho { &mut j_rho[id] } else { &mut j_u[id] };
                    for (&i, &a) in idx.iter().zip(coef.iter()) {
                        target[i] += w * res * a;
                    }
                }
            }
        }
    }
    let wrap = |v: Vec<Vec<f64>>| {
        TreeField::from_fn(tree, {
            let mut it = v.into_iter();
            move |_| Field::from_raw(grid, it.next().expect("one field per node"))
        })
    };
    (total.total(), wrap(j_rho), wrap(j_u))
}

/// Expected data misfit of pure observation noise of relative level `level`.
pub fn noise_floor(ip: &InversionProblem, level: f64) -> f64 {
    let tree = &ip.base.tree;
    let mut s = NeumaierSum::new();
    for &leaf in tree.leaves() {
        let p = tree.node(leaf).prob;
        for &w in ip.region_weights() {
            s.add(p * w);
        }
    }
    let active = ip.trace_mask.iter().filter(|m| **m).count() as f64;
    for id in 0..tree.len() {
        let node = tree.node(id);
        s.add(2.0 * active * ip.transverse() as f64 * ip.trace_time_weight(node.depth) * node.prob * ip.transverse_weight());
    }
    0.5 * level * level * s.total()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructOptions {
    pub alpha: f64,
    pub max_iters: u64,
    /// Stop when `||grad|| <= grad_tol ||grad_0||`.
    pub grad_tol: f64,
    pub memory: usize,
    /// Cost evaluations allowed per line search.
    pub max_line_search: usize,
    pub adjoint_tol: f64,
    pub adjoint_max_iters: usize,
    pub solver: SolverConfig,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            alpha: 1e-8,
            max_iters: 200,
            grad_tol: 1e-6,
            memory: 10,
            max_line_search: 40,
            adjoint_tol: 1e-13,
            adjoint_max_iters: 600,
            solver: inversion_solver_config(),
        }
    }
}

struct Cache {
    last: Option<(Vec<f64>, Misfit, Vec<f64>)>,
    warm: Option<TreeField<Field>>,
    trials: usize,
    evaluations: usize,
}

/// Misfit of a candidate source together with its adjoint gradient.
pub struct Objective<'a> {
    ip: &'a InversionProblem,
    obs: &'a Observations,
    opts: ReconstructOptions,
    cache: Mutex<Cache>,
}

impl<'a> Objective<'a> {
    pub fn new(ip: &'a InversionProblem, obs: &'a Observations, opts: ReconstructOptions) -> Self {
        Self { ip, obs, opts, cache: Mutex::new(Cache { last: None, warm: None, trials: 0, evaluations: 0 }) }
    }

    /// Coupled solve, misfit and gradient at `r`.
    pub fn evaluate(&self, r: &[f64]) -> Result<(Misfit, Vec<f64>)> {
        let mut cache = self.cache.lock().expect("objective cache");
        if let Some((p, m, g)) = &cache.last {
            if p.as_slice() == r {
                return Ok((*m, g.clone()));
            }
        }
        let (m, g, u) = self.compute(r, cache.warm.as_ref())?;
        cache.warm = Some(u);
        cache.last = Some((r.to_vec(), m, g.clone()));
        cache.evaluations += 1;
        Ok((m, g))
    }

    pub fn evaluations(&self) -> usize {
        self.cache.lock().expect("objective cache").evaluations
    }

    fn compute(&self, r: &[f64], warm: Option<&TreeField<Field>>) -> Result<(Misfit, Vec<f64>, TreeField<Field>)> {
        let ip = self.ip;
        let problem = ip.problem_with(r)?;
        let sol = ip.solve(r, &self.opts.solver, warm)?;
        let (data, j_rho, j_u) = data_misfit(ip, self.obs, &sol);
        let reg = self.opts.alpha * ip.source_norm_sq(r);
        let adj = fixed_point_adjoint(
            &problem,
            &sol.rho,
            &sol.u,
            &j_rho,
            &j_u,
            self.opts.solver.transport_scheme,
            self.opts.solver.damping,
            self.opts.adjoint_tol,
            self.opts.adjoint_max_iters,
        )?;
        let grid = ip.base.grid;
        let nt = ip.transverse();
        let mut grad = vec![0.0; r.len()];
        for k in 0..grid.steps() {
            let shape = ip.shape_field(k);
            for &id in problem.tree.level(k) {
                let hb = adj.hamiltonian_bar.get(id).values();
                for (i, (&a, &s)) in hb.iter().zip(shape.values()).enumerate() {
                    let j = if nt == 1 { 0 } else { grid.multi_index(i)[1] };
                    grad[k * nt + j] += a * s;
                }
            }
        }
        for (g, d) in grad.iter_mut().zip(ip.source_norm_sq_grad(r)) {
            *g += self.opts.alpha * d;
        }
        Ok((Misfit { total: data + reg, data, regularization: reg }, grad, sol.u))
    }
}

fn to_argmin(e: Error) -> argmin::core::Error {
    argmin::core::Error::msg(e.to_string())
}

// the executor owns its problem; the objective outlives the run
struct Shared<'o, 'a>(&'o Objective<'a>);

impl CostFunction for Shared<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let o = self.0;
        {
            let mut c = o.cache.lock().expect("objective cache");
            c.trials += 1;
            if c.trials > o.opts.max_line_search {
                return Err(argmin::core::Error::msg(format!(
                    "no Armijo step within {} trials",
                    o.opts.max_line_search
                )));
            }
        }
        o.evaluate(p).map(|(m, _)| m.total).map_err(to_argmin)
    }
}

impl Gradient for Shared<'_, '_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        self.0.cache.lock().expect("objective cache").trials = 0;
        self.0.evaluate(p).map(|(_, g)| g).map_err(to_argmin)
    }
}

/// One accepted quasi-Newton iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: u64,
    pub misfit: f64,
    pub grad_norm: f64,
    /// Relative `L^2` error against the ground truth, when known.
    pub rel_error: Option<f64>,
}

type LbfgsState = IterState<Vec<f64>, Vec<f64>, (), (), (), f64>;

struct History {
    records: Arc<Mutex<Vec<IterationRecord>>>,
    truth: Option<Vec<f64>>,
    ip: InversionProblem,
}

impl History {
    fn record(&self, state: &LbfgsState) {
        let grad_norm = state.get_gradient().map_or(f64::NAN, |g| l2(g));
        let rel_error = match (&self.truth, state.get_param()) {
            (Some(t), Some(p)) => Some(relative_error(&self.ip, p, t)),
            _ => None,
        };
        self.records.lock().expect("history").push(IterationRecord {
            iter: state.get_iter(),
            misfit: state.get_cost(),
            grad_norm,
            rel_error,
        });
    }
}

impl Observe<LbfgsState> for History {
    fn observe_init(&mut self, _name: &str, state: &LbfgsState, _kv: &KV) -> std::result::Result<(), argmin::core::Error> {
        self.record(state);
        Ok(())
    }

    fn observe_iter(&mut self, state: &LbfgsState, _kv: &KV) -> std::result::Result<(), argmin::core::Error> {
        if !state.terminated() || state.get_iter() > self.records.lock().expect("history").last().map_or(0, |r| r.iter) {
            self.record(state);
        }
        Ok(())
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||a - b|| / ||b||` in `L^2(0,T; H^1(x'))`; the absolute norm when `b = 0`.
pub fn relative_error(ip: &InversionProblem, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nb = ip.source_norm_sq(b).sqrt();
    let nd = ip.source_norm_sq(&d).sqrt();
    if nb > 0.0 {
        nd / nb
    } else {
        nd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    /// `K x transverse` table, row-major.
    pub r_hat: Vec<f64>,
    pub steps: usize,
    pub transverse: usize,
    pub relative_l2_error: Option<f64>,
    pub history: Vec<IterationRecord>,
    pub alpha: f64,
    pub misfit: Misfit,
    /// Data misfit relative to the data misfit of the initial guess.
    pub relative_misfit: f64,
    pub converged: bool,
    pub termination: String,
    pub evaluations: usize,
    pub warnings: Vec<String>,
}

impl ReconstructionResult {
    /// `r_hat` at step `k` on the problem grid (constant in `x1`).
    pub fn field_at(&self, ip: &InversionProblem, k: usize) -> Field {
        let g = ip.base.grid;
        let nt = self.transverse;
        Field::from_fn(g, |x| {
            let j = if nt == 1 {
                0
            } else {
                g.index_of(x[1]).unwrap_or(0)
            };
            self.r_hat[k * nt + j]
        })
    }
}

/// Minimizes the regularized misfit from `init` by L-BFGS with backtracking
/// Armijo line search.
pub fn reconstruct_source(
    ip: &InversionProblem,
    obs: &Observations,
    init: &[f64],
    opts: ReconstructOptions,
    truth: Option<&[f64]>,
) -> Result<ReconstructionResult> {
    if init.len() != ip.unknowns() {
        return Err(Error::ShapeMismatch(format!("initial guess has {} values, expected {}", init.len(), ip.unknowns())));
    }
    if !(opts.alpha >= 0.0) {
        return Err(Error::Config(format!("alpha = {} must be nonnegative", opts.alpha)));
    }
    let mut warnings = Vec::new();
    if opts.alpha == 0.0 && obs.noise.level > 0.0 {
        warnings.push("alpha = 0 with noisy observations: the least-squares problem is ill-conditioned".into());
    }
    let objective = Objective::new(ip, obs, opts);
    let (m0, g0) = objective.evaluate(init)?;
    let g0n = l2(&g0);
    let tol = (opts.grad_tol * g0n).max(f64::MIN_POSITIVE);
    let records = Arc::new(Mutex::new(Vec::new()));
    let history = History { records: records.clone(), truth: truth.map(|t| t.to_vec()), ip: ip.clone() };
    let ls = BacktrackingLineSearch::new(ArmijoCondition::new(1e-4).map_err(opt_err)?).rho(0.5).map_err(opt_err)?;
    let solver = LBFGS::new(ls, opts.memory).with_tolerance_grad(tol).map_err(opt_err)?.with_tolerance_cost(0.0).map_err(opt_err)?;
    let res = Executor::new(Shared(&objective), solver)
        .configure(|s| s.param(init.to_vec()).cost(m0.total).gradient(g0.clone()).max_iters(opts.max_iters))
        .add_observer(history, ObserverMode::Always)
        .run()
        .map_err(opt_err)?;
    let state = res.state();
    let r_hat = state.get_best_param().or(state.get_param()).cloned().unwrap_or_else(|| init.to_vec());
    let (m, g) = objective.evaluate(&r_hat)?;
    let reason = state.get_termination_reason().cloned();
    let gn = l2(&g);
    let (converged, termination) = match reason {
        Some(TerminationReason::SolverConverged) => (true, "gradient tolerance reached".to_string()),
        Some(TerminationReason::MaxItersReached) => (false, "maximum iterations reached".to_string()),
        Some(TerminationReason::SolverExit(msg)) => {
            // a failed line search at the resolution floor of the forward solve
            let stalled = gn <= 1e-6 * g0n || m.data <= 1e-14 * m0.data.max(f64::MIN_POSITIVE);
            if !stalled {
                return Err(Error::Optimization(format!("{msg} at gradient norm {gn:.3e}")));
            }
            (true, format!("stalled at the forward-solve floor: {msg}"))
        }
        other => (false, format!("{other:?}")),
    };
    let history = records.lock().expect("history").clone();
    let relative_misfit = if m0.data > 0.0 { m.data / m0.data } else { 0.0 };
    Ok(ReconstructionResult {
        relative_l2_error: truth.map(|t| relative_error(ip, &r_hat, t)),
        steps: ip.base.grid.steps(),
        transverse: ip.transverse(),
        r_hat,
        history,
        alpha: opts.alpha,
        misfit: m,
        relative_misfit,
        converged,
        termination,
        evaluations: objective.evaluations(),
        warnings,
    })
}

fn opt_err(e: argmin::core::Error) -> Error {
    Error::Optimization(e.to_string())
}

/// Outcome of the discrepancy principle over an `alpha` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaChoice {
    pub alpha: f64,
    /// `tau^2` times the expected noise misfit.
    pub target: f64,
    /// `(alpha, data misfit)` for every candidate.
    pub candidates: Vec<(f64, f64)>,
    pub result: ReconstructionResult,
}

/// Discrepancy principle: walks `alphas` from the largest down, warm
/// starting each run from the previous minimizer, and keeps the first `alpha`
/// whose data misfit does not exceed `tau^2` times the expected noise
/// misfit; the smallest `alpha` when none does.
pub fn discrepancy_alpha(
    ip: &InversionProblem,
    obs: &Observations,
    alphas: &[f64],
    tau: f64,
    opts: ReconstructOptions,
    truth: Option<&[f64]>,
) -> Result<AlphaChoice> {
    if alphas.is_empty() || alphas.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::Config("alpha grid must be nonempty and nonnegative".into()));
    }
    let mut grid = alphas.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    let target = tau * tau * noise_floor(ip, obs.noise.level);
    let mut init = vec![0.0; ip.unknowns()];
    let mut candidates = Vec::new();
    let mut last = None;
    for a in grid {
        let r = reconstruct_source(ip, obs, &init, ReconstructOptions { alpha: a, ..opts }, truth)?;
        candidates.push((a, r.misfit.data));
        init.clone_from(&r.r_hat);
        let hit = r.misfit.data <= target;
        last = Some(r);
        if hit {
            break;
        }
    }
    let result = last.expect("nonempty grid");
    Ok(AlphaChoice { alpha: result.alpha, target, candidates, result })
}

/// Independent reconstructions from zero for every `alpha`, run
/// concurrently; results keep the order of `alphas`.
pub fn alpha_sweep(
    ip: &InversionProblem,
    obs: &Observations,
    alphas: &[f64],
    opts: ReconstructOptions,
    truth: Option<&[f64]>,
) -> Result<Vec<ReconstructionResult>> {
    let init = vec![0.0; ip.unknowns()];
    alphas
        .par_iter()
        .map(|&a| reconstruct_source(ip, obs, &init, ReconstructOptions { alpha: a, ..opts }, truth))
        .collect()
}

/// Agreement of two reconstructions from different initial guesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessCertificate {
    /// `||r1 - r2|| / max(||r1||, 1)`.
    pub value: f64,
    /// The same quantity restricted to `[epsilon, T]`.
    pub interior_value: f64,
    pub epsilon: f64,
    pub first: ReconstructionResult,
    pub second: ReconstructionResult,
}

/// Random initial guess, uniform in `[-scale, scale]`.
pub fn random_guess(ip: &InversionProblem, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..ip.unknowns()).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

/// Reconstructs from `init_a` and `init_b` and compares the results.
pub fn uniqueness_certificate(
    ip: &InversionProblem,
    obs: &Observations,
    init_a: &[f64],
    init_b: &[f64],
    opts: ReconstructOptions,
    truth: Option<&[f64]>,
) -> Result<UniquenessCertificate> {
    let first = reconstruct_source(ip, obs, init_a, opts, truth)?;
    let second = reconstruct_source(ip, obs, init_b, opts, truth)?;
    compare_reconstructions(ip, first, second)
}

/// Certificate of two finished reconstructions of the same data.
pub fn compare_reconstructions(
    ip: &InversionProblem,
    first: ReconstructionResult,
    second: ReconstructionResult,
) -> Result<UniquenessCertificate> {
    for (name, r) in [("first", &first), ("second", &second)] {
        if !r.converged {
            return Err(Error::Optimization(format!("{name} reconstruction did not converge: {}", r.termination)));
        }
    }
    let d: Vec<f64> = first.r_hat.iter().zip(&second.r_hat).map(|(a, b)| a - b).collect();
    let denom = ip.source_norm_sq(&first.r_hat).sqrt().max(1.0);
    let g = ip.base.grid;
    let from = (ip.cutoff.epsilon / g.dt()).ceil() as usize;
    let denom_int = ip.source_norm_sq_from(&first.r_hat, from).sqrt().max(1.0);
    Ok(UniquenessCertificate {
        value: ip.source_norm_sq(&d).sqrt() / denom,
        interior_value: ip.source_norm_sq_from(&d, from).sqrt() / denom_int,
        epsilon: ip.cutoff.epsilon,
        first,
        second,
    })
}
