//! Term-by-term evaluation of the four weighted inequalities.
//!
//! Every integral is reported after division by the common factor
//! `theta(T)^2 max(1, lambda mu (T + 2)^{mu - 1})`, and is also kept as a
//! natural logarithm so that terms far below the double range stay visible.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synthetic::{gradient_spectral, slab_faces, slab_trace, BackwardDatum, ForwardDatum, SyntheticDatum};
use super::weight::{mu_min, CarlemanWeight, Coefficient, TimeRule};
use crate::error::{Error, Result};
use crate::grid::{spectral, Field, Grid};
use crate::model::beta_hat;
use crate::numerics::{LogSumExp, NeumaierSum};
use crate::tree::{ScenarioTree, TreeField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theorem {
    Th1,
    Th2,
    Th3,
    Th4,
}

impl Theorem {
    pub fn name(&self) -> &'static str {
        match self {
            Theorem::Th1 => "th1",
            Theorem::Th2 => "th2",
            Theorem::Th3 => "th3",
            Theorem::Th4 => "th4",
        }
    }

    pub fn term_names(&self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            Theorem::Th1 | Theorem::Th3 => (
                &["laplacian", "weighted_w", "weighted_grad_w", "f2", "div_f2"],
                &["f1", "terminal_w", "terminal_grad_w"],
            ),
            Theorem::Th2 | Theorem::Th4 => {
                (&["weighted_p", "grad_p"], &["g1", "terminal_p", "initial_grad_p", "initial_p"])
            }
        }
    }
}

/// Region of integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// The whole periodic box.
    #[default]
    Box,
    /// `G = (0, 1) x box'`, with trapezoid half weights on the faces.
    Slab,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    /// Normalized value.
    pub value: f64,
    /// Natural logarithm of the normalized value.
    pub log_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub theorem: Theorem,
    pub lambda: f64,
    pub mu: f64,
    pub beta: f64,
    pub points: usize,
    pub steps: usize,
    pub lhs_terms: Vec<Term>,
    pub rhs_terms: Vec<Term>,
    pub lhs_total: f64,
    pub rhs_total: f64,
    pub lhs_log: f64,
    pub rhs_log: f64,
    /// `rhs_total - lhs_total` in normalized units.
    pub margin: f64,
    /// `margin / rhs_total`, evaluated in log space.
    pub relative_margin: f64,
    /// `ln(2 l(T))`, the logarithm of the removed exponent (`-inf` for `lambda = 0`).
    pub ln_reference_shift: f64,
    /// Logarithm of the data-independent coefficient scale.
    pub ln_scale: f64,
}

impl InequalityReport {
    /// `margin >= -slack * rhs_total`.
    pub fn passes(&self, slack: f64) -> bool {
        self.relative_margin >= -slack
    }

    pub fn term(&self, name: &str) -> Option<&Term> {
        self.lhs_terms.iter().chain(&self.rhs_terms).find(|t| t.name == name)
    }

    pub fn csv_header(theorem: Theorem) -> String {
        let (l, r) = theorem.term_names();
        let mut cols = vec!["theorem", "lambda", "mu", "beta", "N", "K"];
        cols.extend_from_slice(l);
        cols.extend_from_slice(r);
        cols.extend_from_slice(&["lhs_total", "rhs_total", "lhs_log", "rhs_log", "margin", "relative_margin", "normalized"]);
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.theorem.name().to_string(),
            format!("{:e}", self.lambda),
            format!("{}", self.mu),
            format!("{}", self.beta),
            self.points.to_string(),
            self.steps.to_string(),
        ];
        for t in self.lhs_terms.iter().chain(&self.rhs_terms) {
            cols.push(format!("{:e}", t.value));
        }
        for v in [self.lhs_total, self.rhs_total, self.lhs_log, self.rhs_log, self.margin, self.relative_margin] {
            cols.push(format!("{v:e}"));
        }
        cols.push("true".into());
        cols.join(",")
    }
}

fn domain_weights(grid: &Grid, domain: Domain) -> Result<Vec<f64>> {
    let vol = grid.cell_volume();
    match domain {
        Domain::Box => Ok(vec![vol; grid.len()]),
        Domain::Slab => {
            let (i0, i1) = slab_faces(grid)?;
            Ok((0..grid.len())
                .map(|flat| {
                    let i = grid.multi_index(flat)[0];
                    let x1 = grid.coord(i);
                    if i == i0 || i == i1 {
                        0.5 * vol
                    } else if x1 > 0.0 && x1 < 1.0 {
                        vol
                    } else {
                        0.0
                    }
                })
                .collect())
        }
    }
}

fn weighted_sq(f: &Field, wts: &[f64]) -> f64 {
    let mut s = NeumaierSum::new();
    for (v, w) in f.values().iter().zip(wts) {
        s.add(w * v * v);
    }
    s.total()
}

fn expect_at(tree: &ScenarioTree, depth: usize, f: impl Fn(usize) -> f64) -> f64 {
    tree.expectation_at_depth(depth, f)
}

/// Expected spatial integrals of a backward datum.
#[derive(Debug, Clone)]
pub struct BackwardIntegrals {
    pub beta: f64,
    pub horizon: f64,
    pub points: usize,
    pub steps: usize,
    pub has_f3: bool,
    /// `[|lap w|^2, w^2, |grad w|^2]` at depths `0..=K`.
    pub state: Vec<[f64; 3]>,
    /// `[|f2|^2, |div f2|^2, f1^2]` on steps `0..K`.
    pub step: Vec<[f64; 3]>,
}

impl BackwardIntegrals {
    pub fn new(d: &BackwardDatum, domain: Domain) -> Result<Self> {
        let wts = domain_weights(&d.grid, domain)?;
        let tree = &d.tree;
        let slice = |id: usize| -> [f64; 6] {
            let w = d.w.get(id);
            let grad: f64 = gradient_spectral(w).iter().map(|g| weighted_sq(g, &wts)).sum();
            let f2 = d.f2.get(id);
            [
                weighted_sq(&spectral::laplacian(w), &wts),
                weighted_sq(w, &wts),
                grad,
                weighted_sq(f2, &wts),
                weighted_sq(&spectral::partial(f2, 0), &wts),
                weighted_sq(d.f1.get(id), &wts),
            ]
        };
        let slices: Vec<[f64; 6]> = (0..tree.len()).into_par_iter().map(slice).collect();
        let kk = tree.steps();
        let state = (0..=kk).map(|k| std::array::from_fn(|j| expect_at(tree, k, |id| slices[id][j]))).collect();
        let step = (0..kk).map(|k| std::array::from_fn(|j| expect_at(tree, k, |id| slices[id][3 + j]))).collect();
        Ok(Self {
            beta: d.beta,
            horizon: d.grid.horizon(),
            points: d.grid.points(),
            steps: kk,
            has_f3: d.f3.is_some_and(|c| c.iter().any(|v| *v != 0.0)),
            state,
            step,
        })
    }
}

/// Expected spatial integrals of a forward datum.
#[derive(Debug, Clone)]
pub struct ForwardIntegrals {
    pub beta: f64,
    pub horizon: f64,
    pub points: usize,
    pub steps: usize,
    /// `[p^2, |grad p|^2]` at depths `0..=K`.
    pub state: Vec<[f64; 2]>,
    /// `g1^2` on steps `0..K`.
    pub step: Vec<f64>,
}

impl ForwardIntegrals {
    pub fn new(d: &ForwardDatum, domain: Domain) -> Result<Self> {
        let wts = domain_weights(&d.grid, domain)?;
        let tree = &d.tree;
        let slices: Vec<[f64; 3]> = (0..tree.len())
            .into_par_iter()
            .map(|id| {
                let p = d.p.get(id);
                let grad: f64 = gradient_spectral(p).iter().map(|g| weighted_sq(g, &wts)).sum();
                [weighted_sq(p, &wts), grad, weighted_sq(d.g1.get(id), &wts)]
            })
            .collect();
        let kk = tree.steps();
        Ok(Self {
            beta: d.beta,
            horizon: d.grid.horizon(),
            points: d.grid.points(),
            steps: kk,
            state: (0..=kk).map(|k| std::array::from_fn(|j| expect_at(tree, k, |id| slices[id][j]))).collect(),
            step: (0..kk).map(|k| expect_at(tree, k, |id| slices[id][2])).collect(),
        })
    }
}

fn ln(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        f64::NEG_INFINITY
    }
}

// integral of a piecewise-constant step quantity
fn step_term(weight: &CarlemanWeight, rule: TimeRule, kappa: f64, c: Coefficient, values: &[f64]) -> f64 {
    let dt = weight.horizon / values.len() as f64;
    let mut acc = LogSumExp::new();
    for (k, &v) in values.iter().enumerate() {
        if v > 0.0 {
            let (a, b) = (k as f64 * dt, (k + 1) as f64 * dt);
            acc.add(v.ln() + weight.ln_step_integral(rule, kappa, c, a, b));
        }
    }
    acc.log_total()
}

// integral of a state quantity known at every depth
fn state_term(weight: &CarlemanWeight, rule: TimeRule, kappa: f64, c: Coefficient, values: &[f64]) -> f64 {
    let steps = values.len() - 1;
    let dt = weight.horizon / steps as f64;
    let mut acc = LogSumExp::new();
    for k in 0..steps {
        let (a, b) = (k as f64 * dt, (k + 1) as f64 * dt);
        acc.add(weight.ln_step_integral_linear(rule, kappa, c, a, b, values[k], values[k + 1]));
    }
    acc.log_total()
}

fn make_terms(names: &[&str], logs: &[f64]) -> Vec<Term> {
    names
        .iter()
        .zip(logs)
        .map(|(n, &l)| Term { name: n.to_string(), value: l.exp(), log_value: l })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    theorem: Theorem,
    weight: &CarlemanWeight,
    beta: f64,
    points: usize,
    steps: usize,
    lhs_logs: &[f64],
    rhs_logs: &[f64],
) -> InequalityReport {
    let (ln, rn) = theorem.term_names();
    let lhs_terms = make_terms(ln, lhs_logs);
    let rhs_terms = make_terms(rn, rhs_logs);
    let total = |logs: &[f64]| {
        let mut a = LogSumExp::new();
        for &l in logs {
            a.add(l);
        }
        a.log_total()
    };
    let (lhs_log, rhs_log) = (total(lhs_logs), total(rhs_logs));
    let sum = |ts: &[Term]| {
        let mut s = NeumaierSum::new();
        for t in ts {
            s.add(t.value);
        }
        s.total()
    };
    let (lhs_total, rhs_total) = (sum(&lhs_terms), sum(&rhs_terms));
    let relative_margin = if rhs_log == f64::NEG_INFINITY {
        if lhs_log == f64::NEG_INFINITY {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        -(lhs_log - rhs_log).exp_m1()
    };
    InequalityReport {
        theorem,
        lambda: weight.lambda,
        mu: weight.mu,
        beta,
        points,
        steps,
        lhs_terms,
        rhs_terms,
        lhs_total,
        rhs_total,
        lhs_log,
        rhs_log,
        margin: rhs_total - lhs_total,
        relative_margin,
        ln_reference_shift: 2f64.ln() + weight.ln_ell(weight.horizon),
        ln_scale: weight.ln_scale(),
    }
}

/// Evaluates the backward inequality; `bounded` selects the constants of
/// the bounded-domain version.
pub fn evaluate_backward(ints: &BackwardIntegrals, weight: &CarlemanWeight, rule: TimeRule, bounded: bool) -> InequalityReport {
    let (lam, mu) = (weight.lambda, weight.mu);
    let bh = beta_hat(ints.beta);
    let state = |j: usize| ints.state.iter().map(|v| v[j]).collect::<Vec<_>>();
    let step = |j: usize| ints.step.iter().map(|v| v[j]).collect::<Vec<_>>();
    let f2_c = if bounded { 0.5 } else { 1.0 };
    let f1_c = if bounded { 4.0 } else { 2.0 };
    let lhs = [
        state_term(weight, rule, 2.0, Coefficient::new(0.5 * bh * bh, 0.0), &state(0)),
        state_term(weight, rule, 2.0, Coefficient::new(0.5 * lam * lam * mu * mu, 2.0 * mu - 2.0), &state(1)),
        state_term(weight, rule, 2.0, Coefficient::new(lam * mu, mu - 1.0), &state(2)),
        step_term(weight, rule, 1.0, Coefficient::new(f2_c * lam * mu, mu - 1.0), &step(0)),
        step_term(weight, rule, 2.0, Coefficient::new(0.5 * (1.0 - ints.beta * ints.beta), 0.0), &step(1)),
    ];
    let t = ints.horizon;
    let end = weight.ln_slice_factor(2.0, t);
    let coef_t = if lam > 0.0 { lam.ln() + mu.ln() + (mu - 1.0) * (t + 2.0).ln() } else { f64::NEG_INFINITY };
    let last = ints.state[ints.steps];
    let rhs = [
        step_term(weight, rule, 2.0, Coefficient::new(f1_c, 0.0), &step(2)),
        end + coef_t + ln(last[1]),
        end + bh.ln() + ln(last[2]),
    ];
    let th = if bounded { Theorem::Th3 } else { Theorem::Th1 };
    assemble(th, weight, ints.beta, ints.points, ints.steps, &lhs, &rhs)
}

/// Evaluates the forward inequality (same constants on the box and on `G`).
pub fn evaluate_forward(ints: &ForwardIntegrals, weight: &CarlemanWeight, rule: TimeRule, bounded: bool) -> InequalityReport {
    let (lam, mu) = (weight.lambda, weight.mu);
    let bh = beta_hat(ints.beta);
    let state = |j: usize| ints.state.iter().map(|v| v[j]).collect::<Vec<_>>();
    let lhs = [
        state_term(weight, rule, 2.0, Coefficient::new(0.25 * lam * mu * mu, mu - 2.0), &state(0)),
        state_term(weight, rule, 2.0, Coefficient::new(mu.sqrt(), 0.0), &state(1)),
    ];
    let t = ints.horizon;
    let end = weight.ln_slice_factor(2.0, t);
    let start = weight.ln_slice_factor(2.0, 0.0);
    let coef_t = if lam > 0.0 { (2.0 * lam).ln() + mu.ln() + (mu - 1.0) * (t + 2.0).ln() } else { f64::NEG_INFINITY };
    let (first, last) = (ints.state[0], ints.state[ints.steps]);
    let rhs = [
        step_term(weight, rule, 2.0, Coefficient::new(2.0, 0.0), &ints.step),
        end + coef_t + ln(last[0]),
        start + bh.ln() + ln(first[1]),
        start + 0.5 * mu.ln() + ln(first[0]),
    ];
    let th = if bounded { Theorem::Th4 } else { Theorem::Th2 };
    assemble(th, weight, ints.beta, ints.points, ints.steps, &lhs, &rhs)
}

/// Options shared by the four checks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckOptions {
    pub rule: TimeRule,
    pub domain: Domain,
}

fn backward_of(datum: &SyntheticDatum) -> Result<&BackwardDatum> {
    match datum {
        SyntheticDatum::Backward(b) => Ok(b),
        SyntheticDatum::Forward(_) => Err(Error::Precondition("expected a backward datum".into())),
    }
}

fn forward_of(datum: &SyntheticDatum) -> Result<&ForwardDatum> {
    match datum {
        SyntheticDatum::Forward(f) => Ok(f),
        SyntheticDatum::Backward(_) => Err(Error::Precondition("expected a forward datum".into())),
    }
}

fn require_trace_free(fields: &TreeField<Field>, what: &str) -> Result<()> {
    let tr = slab_trace(fields)?;
    if tr > 1e-12 {
        return Err(Error::Precondition(format!("{what} has boundary trace {tr:e} on x1 in {{0, 1}}")));
    }
    Ok(())
}

/// Backward estimate on the whole space (or restricted to `G` via `opts.domain`).
pub fn check_th1(datum: &SyntheticDatum, weight: &CarlemanWeight, opts: CheckOptions) -> Result<InequalityReport> {
    let d = backward_of(datum)?;
    if d.f3.is_some_and(|c| c.iter().any(|v| *v != 0.0)) {
        return Err(Error::Precondition("datum carries f3; use the bounded-domain check".into()));
    }
    let ints = BackwardIntegrals::new(d, opts.domain)?;
    Ok(evaluate_backward(&ints, weight, opts.rule, false))
}

/// Forward estimate on the whole space.
pub fn check_th2(datum: &SyntheticDatum, weight: &CarlemanWeight, opts: CheckOptions) -> Result<InequalityReport> {
    let d = forward_of(datum)?;
    require_mu(weight)?;
    let ints = ForwardIntegrals::new(d, opts.domain)?;
    Ok(evaluate_forward(&ints, weight, opts.rule, false))
}

/// Backward estimate on `G` with homogeneous Dirichlet data in `x1`.
pub fn check_th3(datum: &SyntheticDatum, weight: &CarlemanWeight, rule: TimeRule) -> Result<InequalityReport> {
    let d = backward_of(datum)?;
    require_trace_free(&d.w, "w")?;
    let ints = BackwardIntegrals::new(d, Domain::Slab)?;
    Ok(evaluate_backward(&ints, weight, rule, true))
}

/// Forward estimate on `G` with homogeneous Dirichlet data in `x1`.
pub fn check_th4(datum: &SyntheticDatum, weight: &CarlemanWeight, rule: TimeRule) -> Result<InequalityReport> {
    let d = forward_of(datum)?;
    require_mu(weight)?;
    require_trace_free(&d.p, "p")?;
    let ints = ForwardIntegrals::new(d, Domain::Slab)?;
    Ok(evaluate_forward(&ints, weight, rule, true))
}

fn require_mu(weight: &CarlemanWeight) -> Result<()> {
    let required = mu_min(weight.horizon);
    if weight.mu < required {
        return Err(Error::MuBelowMinimum { mu: weight.mu, required });
    }
    Ok(())
}
