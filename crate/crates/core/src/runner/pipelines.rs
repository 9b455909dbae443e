//! The pipeline behind each command.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::output::num;
use super::{capacity_guard, derive_seed, streams, Command, RunContext, StabilityMode};
use crate::carleman::{
    check_th1, check_th2, check_th3, check_th4, doubling_search, make_backward, make_forward, mu_min, sweep,
    CarlemanWeight, CheckOptions, InequalityReport, SearchBounds, SearchCertificate, SyntheticDatum, SyntheticSpec,
    Theorem, TimeRule, SHIPPED_F3,
};
use crate::error::{Error, Result};
use crate::grid::{integrate, Grid};
use crate::inversion::{
    add_noise, compare_reconstructions, discrepancy_alpha, inversion_solver_config, observe, random_guess,
    reconstruct_source, CutoffParams, InversionProblem, MisfitWeight, NoiseSpec, ReconstructOptions,
    ReconstructionResult,
};
use crate::model::{MfgProblem, ProblemSpec};
use crate::solver::{solve_mfg, SolverConfig};
use crate::stability::{holder_experiment, lipschitz_experiment, Perturbation, StabilityFit};
use crate::tree::{ScenarioTree, TreeKind};

/// Errors raised while resolving the configuration are reported as
/// configuration errors.
fn validated<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Precondition(m) | Error::Structure(m) | Error::ShapeMismatch(m) | Error::Solver(m) => Error::Config(m),
        other => other,
    })
}

pub(crate) fn dispatch(ctx: &mut RunContext) -> Result<()> {
    let command = ctx.config.command()?;
    ctx.stage("validate");
    match command {
        Command::Simulate => simulate(ctx),
        Command::VerifyCarleman => verify_carleman(ctx),
        Command::StabilityTwin => stability_twin(ctx),
        Command::InvertSource => invert_source(ctx),
        Command::Selftest => super::selftest::run(ctx),
    }
}

fn guarded_spec(ctx: &RunContext) -> Result<ProblemSpec> {
    let spec = ctx.config.problem_spec()?;
    capacity_guard(&spec, ctx.config.memory_limit_bytes())?;
    Ok(spec)
}

fn problem_and_solver(ctx: &RunContext) -> Result<(MfgProblem, SolverConfig)> {
    let spec = guarded_spec(ctx)?;
    let problem = validated(spec.build())?;
    let cfg = ctx.config.solver_config();
    validated(cfg.validate())?;
    Ok((problem, cfg))
}

fn simulate(ctx: &mut RunContext) -> Result<()> {
    let (problem, cfg) = problem_and_solver(ctx)?;
    let tree = &problem.tree;
    let grid = problem.grid;
    let block = &ctx.config.simulate;
    let depths = block.snapshot_depths.clone().unwrap_or_else(|| vec![0, grid.steps()]);
    if let Some(d) = depths.iter().find(|&&d| d > grid.steps()) {
        return Err(Error::Config(format!("snapshot depth {d} beyond K = {}", grid.steps())));
    }
    if let Some(id) = block.snapshot_nodes.iter().find(|&&id| id >= tree.len()) {
        return Err(Error::Config(format!("snapshot node {id} outside a tree of {} nodes", tree.len())));
    }
    let mut nodes: Vec<usize> = depths.iter().flat_map(|&d| tree.level(d).iter().copied()).collect();
    nodes.extend(&block.snapshot_nodes);
    nodes.sort_unstable();
    nodes.dedup();

    ctx.stage("solve");
    let sol = solve_mfg(&problem, &cfg)?;
    ctx.residuals = Some(sol.picard_residuals.clone());
    ctx.converged = Some(sol.converged);

    ctx.stage("write");
    let rows: Vec<Vec<String>> =
        sol.picard_residuals.iter().enumerate().map(|(i, r)| vec![(i + 1).to_string(), num(*r)]).collect();
    ctx.sink.write_csv("residuals.csv", &["iter", "residual"], &rows)?;
    ctx.sink.write_json("tree.json", &tree.manifest())?;
    for &id in &nodes {
        let t = grid.time(tree.node(id).depth);
        ctx.sink.write_fields(&format!("fields/rho_node{id}.fld"), &[(sol.rho.get(id).clone(), t, id)])?;
        ctx.sink.write_fields(&format!("fields/u_node{id}.fld"), &[(sol.u.get(id).clone(), t, id)])?;
    }
    let mass = (0..tree.len()).map(|id| (integrate(sol.rho.get(id)) - 1.0).abs()).fold(0.0, f64::max);
    ctx.note("nodes", tree.len());
    ctx.note("iterations", sol.picard_residuals.len());
    ctx.note("final_residual", sol.picard_residuals.last().copied());
    ctx.note("max_mass_error", mass);
    ctx.note("warnings", &sol.warnings);
    ctx.check("mass_conservation", mass <= 1e-8, format!("max |int rho - 1| = {mass:.3e}"));
    ctx.check("picard_converged", sol.converged, format!("{} sweeps", sol.picard_residuals.len()));
    if !sol.converged {
        let last = sol.picard_residuals.last().copied().unwrap_or(f64::NAN);
        return Err(Error::Solver(format!("Picard iteration stopped at residual {last:.3e} above {}", cfg.picard_tol)));
    }
    Ok(())
}

fn is_bounded(th: Theorem) -> bool {
    matches!(th, Theorem::Th3 | Theorem::Th4)
}

fn is_forward(th: Theorem) -> bool {
    matches!(th, Theorem::Th2 | Theorem::Th4)
}

/// Evaluates the inequality of `th` for one datum.
fn check(th: Theorem, datum: &SyntheticDatum, w: &CarlemanWeight, opts: CheckOptions) -> Result<InequalityReport> {
    match th {
        Theorem::Th1 => check_th1(datum, w, opts),
        Theorem::Th2 => check_th2(datum, w, opts),
        Theorem::Th3 => check_th3(datum, w, opts.rule),
        Theorem::Th4 => check_th4(datum, w, opts.rule),
    }
}

fn verify_carleman(ctx: &mut RunContext) -> Result<()> {
    let block = ctx.config.carleman.clone();
    let th = block.theorem;
    let mut spec = ctx.config.problem_spec()?;
    if ctx.config.tree_kind().is_none() {
        // forward data need distinct paths; K beyond the full-tree limit trips the guard
        spec.tree = if is_forward(th) { TreeKind::Full } else { TreeKind::Recombining };
    }
    capacity_guard(&spec, ctx.config.memory_limit_bytes())?;
    let grid = validated(spec.grid())?;
    let tree = validated(ScenarioTree::new(grid.steps(), grid.dt(), spec.tree))?;
    let betas = block.betas.clone().unwrap_or_else(|| vec![spec.beta]);
    if block.data == 0 || betas.is_empty() {
        return Err(Error::Config("carleman needs at least one datum and one beta".into()));
    }
    if block.search.is_none() && (block.lambdas.is_empty() || block.mus.is_empty()) {
        return Err(Error::Config("carleman sweep needs nonempty lambdas and mus".into()));
    }
    if !(block.slack >= 0.0) {
        return Err(Error::Config(format!("slack = {} must be nonnegative", block.slack)));
    }
    if is_forward(th) {
        let required = mu_min(grid.horizon());
        let smallest = match &block.search {
            Some(b) => b.mu_start,
            None => block.mus.iter().copied().fold(f64::INFINITY, f64::min),
        };
        if smallest < required {
            return Err(Error::MuBelowMinimum { mu: smallest, required });
        }
    }
    for &l in &block.lambdas {
        validated(CarlemanWeight::new(l, 1.0, grid.horizon()))?;
    }
    if block.f3.is_some() && th != Theorem::Th3 {
        return Err(Error::Config(format!("f3 applies to th3 only, not {}", th.name())));
    }
    let f3 = (th == Theorem::Th3).then(|| block.f3.unwrap_or(SHIPPED_F3));
    let template = SyntheticSpec { odd_in_x1: block.synthetic.odd_in_x1 || is_bounded(th), ..block.synthetic };
    let seed = ctx.config.seed;

    ctx.stage("data");
    let jobs: Vec<(f64, usize)> = betas.iter().flat_map(|&b| (0..block.data).map(move |i| (b, i))).collect();
    let data: Vec<SyntheticDatum> = validated(
        jobs.par_iter()
            .map(|&(beta, i)| {
                let s = SyntheticSpec { seed: derive_seed(seed, streams::DATA + i as u64), ..template };
                Ok(if is_forward(th) {
                    SyntheticDatum::Forward(make_forward(&s, grid, &tree, beta, block.forward_scheme)?)
                } else {
                    SyntheticDatum::Backward(make_backward(&s, grid, &tree, beta, f3)?)
                })
            })
            .collect::<Result<Vec<_>>>(),
    )?;

    ctx.stage("evaluate");
    let opts = CheckOptions { rule: block.rule, domain: block.domain };
    let horizon = grid.horizon();
    let eval = |l: f64, m: f64, j: usize| check(th, &data[j], &CarlemanWeight::new(l, m, horizon)?, opts);
    let (reports, certificate) = match block.search {
        Some(bounds) => {
            let cert = doubling_search(data.len(), bounds, eval)?;
            let reports = sweep(&[cert.lambda0], &[cert.mu0], data.len(), eval)?;
            (reports, Some(cert))
        }
        None => (sweep(&block.lambdas, &block.mus, data.len(), eval)?, None),
    };

    ctx.stage("write");
    let datum_of = |r: usize| r % data.len() % block.data;
    let header = InequalityReport::csv_header(th);
    let mut wide = format!("datum,{header}\n");
    for (r, rep) in reports.iter().enumerate() {
        wide.push_str(&format!("{},{}\n", datum_of(r), rep.csv_row()));
    }
    ctx.sink.write("reports.csv", wide.as_bytes())?;
    let mut long = Vec::new();
    for (r, rep) in reports.iter().enumerate() {
        for (side, terms) in [("lhs", &rep.lhs_terms), ("rhs", &rep.rhs_terms)] {
            for t in terms {
                long.push(vec![
                    th.name().to_string(),
                    num(rep.lambda),
                    num(rep.mu),
                    num(rep.beta),
                    rep.points.to_string(),
                    rep.steps.to_string(),
                    datum_of(r).to_string(),
                    side.to_string(),
                    t.name.clone(),
                    num(t.value),
                    num(t.log_value),
                    num(rep.margin),
                    num(rep.relative_margin),
                ]);
            }
        }
    }
    ctx.sink.write_csv(
        "carleman_long.csv",
        &["theorem", "lambda", "mu", "beta", "N", "K", "datum", "side", "term", "value", "log_value", "margin", "relative_margin"],
        &long,
    )?;
    if let Some(c) = &certificate {
        ctx.sink.write_json("certificate.json", c)?;
        ctx.note("lambda0", c.lambda0);
        ctx.note("mu0", c.mu0);
    }
    let passed = reports.iter().filter(|r| r.passes(block.slack)).count();
    let worst = reports.iter().map(|r| r.relative_margin).fold(f64::INFINITY, f64::min);
    let finite = reports
        .iter()
        .all(|r| r.lhs_terms.iter().chain(&r.rhs_terms).all(|t| t.value.is_finite() && t.log_value.is_finite() || t.value == 0.0));
    ctx.note("theorem", th.name());
    ctx.note("reports", reports.len());
    ctx.note("passed", passed);
    ctx.note("worst_relative_margin", worst);
    ctx.check(
        "margins_within_slack",
        passed == reports.len(),
        format!("{passed}/{} reports with relative margin >= -{}", reports.len(), block.slack),
    );
    ctx.check("terms_finite", finite, "every normalized term finite".into());
    Ok(())
}

/// Data and search settings of the bounded-domain constant certification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySpec {
    #[serde(rename = "N")]
    pub points: usize,
    #[serde(rename = "K")]
    pub steps: usize,
    pub beta: f64,
    pub data: usize,
    pub modes: usize,
    pub f3: [f64; 2],
    pub rule: TimeRule,
    pub bounds: SearchBounds,
}

impl Default for CertifySpec {
    fn default() -> Self {
        Self {
            points: 64,
            steps: 32,
            beta: 0.5,
            data: 20,
            modes: 3,
            f3: SHIPPED_F3,
            rule: TimeRule::default(),
            bounds: SearchBounds::default(),
        }
    }
}

/// Doubling search for the bounded backward estimate with the shipped `f3`
/// on `G = (0, 1)`, horizon `horizon`; every datum derives from `seed`.
pub fn certify_bounded_constants(spec: &CertifySpec, horizon: f64, seed: u64) -> Result<SearchCertificate> {
    let grid = Grid::new(1, 1.0, spec.points, horizon, spec.steps)?;
    let tree = ScenarioTree::new(spec.steps, grid.dt(), TreeKind::Recombining)?;
    let data: Vec<SyntheticDatum> = (0..spec.data)
        .into_par_iter()
        .map(|i| {
            let s = SyntheticSpec {
                seed: derive_seed(seed, streams::DATA + i as u64),
                modes: spec.modes,
                odd_in_x1: true,
                ..SyntheticSpec::default()
            };
            Ok(SyntheticDatum::Backward(make_backward(&s, grid, &tree, spec.beta, Some(spec.f3))?))
        })
        .collect::<Result<_>>()?;
    doubling_search(data.len(), spec.bounds, |l, m, i| check_th3(&data[i], &CarlemanWeight::new(l, m, horizon)?, spec.rule))
}

#[derive(Serialize)]
struct FitSummary<'a> {
    mode: StabilityMode,
    fitted_c: f64,
    ratio_spread: f64,
    delta_spread: f64,
    c_by_delta: &'a [(f64, f64)],
    excluded: &'a [usize],
    epsilon: Option<f64>,
    fitted_eta: Option<f64>,
    predicted_eta: Option<f64>,
    mu0_used: Option<f64>,
}

fn stability_twin(ctx: &mut RunContext) -> Result<()> {
    let (problem, cfg) = problem_and_solver(ctx)?;
    let block = ctx.config.stability.clone();
    if block.modes.is_empty() || block.modes.contains(&0) {
        return Err(Error::Config("stability modes must be nonempty and positive".into()));
    }
    let horizon = problem.grid.horizon();
    let fit: StabilityFit = match block.mode {
        StabilityMode::Lipschitz => {
            if block.deltas.is_empty() || block.deltas.iter().any(|d| !(*d >= 0.0)) {
                return Err(Error::Config("deltas must be nonempty and nonnegative".into()));
            }
            let family: Vec<Perturbation> = block.modes.iter().map(|&m| Perturbation::smooth(&problem, m)).collect();
            ctx.stage("twins");
            lipschitz_experiment(&problem, &cfg, &family, &block.deltas)?
        }
        StabilityMode::Holder => {
            let eps = block.epsilon.unwrap_or(0.25 * horizon);
            if !(eps > 0.0 && eps < horizon) {
                return Err(Error::Config(format!("epsilon = {eps} outside (0, {horizon})")));
            }
            let family: Vec<Perturbation> =
                block.modes.iter().map(|&m| Perturbation::density_mode(&problem, m, block.level)).collect();
            let mu0 = match block.mu0 {
                Some(m) => m,
                None => {
                    ctx.stage("certify");
                    let cert = certify_bounded_constants(&block.certify, horizon, derive_seed(ctx.config.seed, streams::CERTIFY))?;
                    ctx.sink.write_json("mu0_certificate.json", &cert)?;
                    cert.mu0
                }
            };
            ctx.stage("twins");
            holder_experiment(&problem, &cfg, eps, &family, mu0)?
        }
    };

    ctx.stage("write");
    let wide: Vec<Vec<String>> = fit
        .runs
        .iter()
        .map(|r| {
            vec![
                r.id.to_string(),
                r.perturbation.clone(),
                num(r.delta),
                num(r.lhs_u),
                num(r.lhs_rho),
                num(r.lhs),
                num(r.rhs_u_terminal),
                num(r.rhs_rho_terminal),
                num(r.rhs_rho_initial),
                num(r.rhs),
                num(r.ratio),
                r.converged.to_string(),
            ]
        })
        .collect();
    ctx.sink.write_csv(
        "runs.csv",
        &[
            "run_id",
            "perturbation",
            "delta",
            "lhs_u",
            "lhs_rho",
            "lhs",
            "rhs_u_terminal",
            "rhs_rho_terminal",
            "rhs_rho_initial",
            "rhs",
            "ratio",
            "converged",
        ],
        &wide,
    )?;
    let long: Vec<Vec<String>> = fit
        .runs
        .iter()
        .map(|r| vec![r.id.to_string(), r.perturbation.clone(), num(r.delta), num(r.lhs), num(r.rhs), num(r.ratio)])
        .collect();
    ctx.sink.write_csv("stability_long.csv", &["run_id", "perturbation", "delta", "lhs", "rhs", "ratio"], &long)?;
    let summary = FitSummary {
        mode: block.mode,
        fitted_c: fit.fitted_c,
        ratio_spread: fit.ratio_spread,
        delta_spread: fit.delta_spread,
        c_by_delta: &fit.c_by_delta,
        excluded: &fit.excluded,
        epsilon: fit.epsilon,
        fitted_eta: fit.fitted_eta,
        predicted_eta: fit.predicted_eta,
        mu0_used: fit.mu0_used,
    };
    ctx.sink.write_json("summary.json", &summary)?;
    ctx.note("fitted_c", fit.fitted_c);
    ctx.note("delta_spread", fit.delta_spread);
    match block.mode {
        StabilityMode::Lipschitz => {
            ctx.check("constant_spread_below_10", fit.delta_spread < 10.0, format!("spread {:.4}", fit.delta_spread));
        }
        StabilityMode::Holder => {
            let (f, p) = (fit.fitted_eta.unwrap_or(f64::NAN), fit.predicted_eta.unwrap_or(f64::NAN));
            ctx.note("fitted_eta", f);
            ctx.note("predicted_eta", p);
            ctx.check("holder_slope", f >= p - 0.1, format!("fitted {f:.4} vs predicted {p:.4}"));
        }
    }
    let all = fit.runs.iter().all(|r| r.converged);
    ctx.check("twins_converged", all, format!("{} runs", fit.runs.len()));
    Ok(())
}

#[derive(Serialize)]
struct RunBrief {
    relative_l2_error: Option<f64>,
    converged: bool,
    termination: String,
    evaluations: usize,
    iterations: usize,
}

impl RunBrief {
    fn of(r: &ReconstructionResult) -> Self {
        Self {
            relative_l2_error: r.relative_l2_error,
            converged: r.converged,
            termination: r.termination.clone(),
            evaluations: r.evaluations,
            iterations: r.history.len(),
        }
    }
}

#[derive(Serialize)]
struct CertificateOut {
    value: f64,
    interior_value: f64,
    epsilon: f64,
    alpha: f64,
    first: RunBrief,
    second: RunBrief,
}

fn invert_source(ctx: &mut RunContext) -> Result<()> {
    let spec = guarded_spec(ctx)?;
    let base = validated(spec.build())?;
    let b = ctx.config.inversion.clone();
    let horizon = base.grid.horizon();
    let cutoff = CutoffParams::from_epsilon(b.eps.unwrap_or(0.25 * horizon));
    let weight = (b.weight_lambda > 0.0).then_some(MisfitWeight { lambda: b.weight_lambda, mu: b.weight_mu });
    let mut ip = validated(InversionProblem::new(base, cutoff, weight))?;
    ip.trace_mask = b.trace_mask;
    let solver = ctx.config.solver.unwrap_or_else(inversion_solver_config);
    validated(solver.validate())?;
    let opts = ReconstructOptions {
        alpha: b.alpha.unwrap_or(0.0),
        max_iters: b.max_iters,
        grad_tol: b.grad_tol,
        solver,
        ..ReconstructOptions::default()
    };
    if b.alpha.is_some_and(|a| !(a >= 0.0)) || b.alpha.is_none() && b.alphas.is_empty() {
        return Err(Error::Config("alpha must be nonnegative, or the alpha grid nonempty".into()));
    }
    if !(b.noise >= 0.0) || !(b.tau > 0.0) {
        return Err(Error::Config(format!("noise = {} and tau = {} must be nonnegative and positive", b.noise, b.tau)));
    }
    let truth = ip.sample_profile(&b.truth);
    let seed = ctx.config.seed;

    ctx.stage("generate");
    let sol = ip.solve(&truth, &opts.solver, None)?;
    let obs = add_noise(&ip, &observe(&ip, &sol), NoiseSpec { level: b.noise, seed: derive_seed(seed, streams::NOISE) })?;

    ctx.stage("reconstruct");
    let zero = vec![0.0; ip.unknowns()];
    let result = match b.alpha {
        Some(a) => reconstruct_source(&ip, &obs, &zero, ReconstructOptions { alpha: a, ..opts }, Some(&truth))?,
        None => {
            let choice = discrepancy_alpha(&ip, &obs, &b.alphas, b.tau, opts, Some(&truth))?;
            let rows: Vec<Vec<String>> =
                choice.candidates.iter().map(|(a, m)| vec![num(*a), num(*m), num(choice.target)]).collect();
            ctx.sink.write_csv("alpha_candidates.csv", &["alpha", "data_misfit", "target"], &rows)?;
            ctx.note("discrepancy_target", choice.target);
            choice.result
        }
    };

    ctx.stage("write");
    let g = ip.base.grid;
    let frames: Vec<_> = (0..g.steps()).map(|k| (result.field_at(&ip, k), g.time(k), k)).collect();
    ctx.sink.write_fields("r_hat.fld", &frames)?;
    let nt = ip.transverse();
    let mut table = Vec::new();
    for k in 0..g.steps() {
        for j in 0..nt {
            let x2 = if nt == 1 { 0.0 } else { g.coord(j) };
            let i = k * nt + j;
            table.push(vec![k.to_string(), num(g.time(k)), num(x2), num(result.r_hat[i]), num(truth[i])]);
        }
    }
    ctx.sink.write_csv("r_hat.csv", &["k", "t", "x2", "r_hat", "truth"], &table)?;
    let conv: Vec<Vec<String>> = result
        .history
        .iter()
        .map(|h| vec![h.iter.to_string(), num(h.misfit), num(h.grad_norm), h.rel_error.map(num).unwrap_or_default()])
        .collect();
    ctx.sink.write_csv("convergence.csv", &["iter", "misfit", "grad_norm", "rel_error"], &conv)?;
    ctx.note("alpha", result.alpha);
    ctx.note("relative_l2_error", result.relative_l2_error);
    ctx.note("data_misfit", result.misfit.data);
    ctx.note("relative_misfit", result.relative_misfit);
    ctx.note("snr_db", if obs.snr_db.is_finite() { Some(obs.snr_db) } else { None });
    ctx.note("noise", b.noise);
    ctx.note("termination", &result.termination);
    ctx.note("evaluations", result.evaluations);
    ctx.note("warnings", &result.warnings);
    ctx.check("reconstruction_converged", result.converged, result.termination.clone());

    if b.certificate {
        ctx.stage("certificate");
        let init = random_guess(&ip, b.init_scale, derive_seed(seed, streams::GUESS));
        let second = reconstruct_source(&ip, &obs, &init, ReconstructOptions { alpha: result.alpha, ..opts }, Some(&truth))?;
        let alpha = result.alpha;
        let cert = compare_reconstructions(&ip, result, second)?;
        let out = CertificateOut {
            value: cert.value,
            interior_value: cert.interior_value,
            epsilon: cert.epsilon,
            alpha,
            first: RunBrief::of(&cert.first),
            second: RunBrief::of(&cert.second),
        };
        ctx.sink.write_json("certificate.json", &out)?;
        ctx.note("certificate", cert.value);
        ctx.note("certificate_interior", cert.interior_value);
    }
    Ok(())
}
