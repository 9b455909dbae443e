//! Weighted energy inequalities for the backward and forward auxiliary
//! equations, with overflow-safe term evaluation and synthetic exact data.

pub mod inequality;
pub mod synthetic;
pub mod weight;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use inequality::{
    check_th1, check_th2, check_th3, check_th4, evaluate_backward, evaluate_forward, BackwardIntegrals, CheckOptions,
    Domain, ForwardIntegrals, InequalityReport, Term, Theorem,
};
pub use synthetic::{
    backward_from_values, forward_from_fn, make_backward, make_forward, BackwardDatum, ForwardDatum, ForwardScheme,
    RandomFunctional, SyntheticDatum, SyntheticSpec,
};
pub use weight::{mu_min, CarlemanWeight, Coefficient, TimeRule};

/// Constant `f3` of the shipped bounded-domain backward model.
pub const SHIPPED_F3: [f64; 2] = [1.0, 0.0];

/// One tested `(lambda, mu)` pair of a constant search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub lambda: f64,
    pub mu: f64,
    pub passed: usize,
    pub total: usize,
    pub worst_relative_margin: f64,
}

/// Smallest tested constants for which every datum passed, with the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchCertificate {
    pub lambda0: f64,
    pub mu0: f64,
    pub slack: f64,
    pub steps: Vec<SearchStep>,
}

/// Bounds of a doubling search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBounds {
    pub lambda_start: f64,
    pub mu_start: f64,
    pub doublings: usize,
    pub slack: f64,
}

impl Default for SearchBounds {
    fn default() -> Self {
        Self { lambda_start: 1.0, mu_start: 1.0, doublings: 12, slack: 0.05 }
    }
}

/// Doubles `lambda` and `mu` together until `eval` passes for every datum.
///
/// `eval(lambda, mu, i)` returns the report of datum `i`; data are evaluated
/// concurrently.
pub fn doubling_search<F>(count: usize, bounds: SearchBounds, eval: F) -> Result<SearchCertificate>
where
    F: Fn(f64, f64, usize) -> Result<InequalityReport> + Sync,
{
    if count == 0 {
        return Err(Error::Precondition("empty data set".into()));
    }
    let mut steps = Vec::new();
    let (mut lambda, mut mu) = (bounds.lambda_start, bounds.mu_start);
    for _ in 0..=bounds.doublings {
        let reports: Vec<InequalityReport> =
            (0..count).into_par_iter().map(|i| eval(lambda, mu, i)).collect::<Result<_>>()?;
        let passed = reports.iter().filter(|r| r.passes(bounds.slack)).count();
        let worst = reports.iter().map(|r| r.relative_margin).fold(f64::INFINITY, f64::min);
        steps.push(SearchStep { lambda, mu, passed, total: count, worst_relative_margin: worst });
        if passed == count {
            return Ok(SearchCertificate { lambda0: lambda, mu0: mu, slack: bounds.slack, steps });
        }
        lambda *= 2.0;
        mu *= 2.0;
    }
    Err(Error::Optimization(format!(
        "no passing constants up to lambda = {}, mu = {}",
        lambda / 2.0,
        mu / 2.0
    )))
}

/// Evaluates `eval` on every `(lambda, mu, datum)` triple concurrently, in
/// row-major order.
pub fn sweep<F>(lambdas: &[f64], mus: &[f64], count: usize, eval: F) -> Result<Vec<InequalityReport>>
where
    F: Fn(f64, f64, usize) -> Result<InequalityReport> + Sync,
{
    let triples: Vec<(f64, f64, usize)> = lambdas
        .iter()
        .flat_map(|&l| mus.iter().flat_map(move |&m| (0..count).map(move |i| (l, m, i))))
        .collect();
    triples.into_par_iter().map(|(l, m, i)| eval(l, m, i)).collect()
}

#[cfg(test)]
mod tests;
