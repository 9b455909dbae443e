//! Acceptance suite: one PASS/FAIL line per criterion at the contract
//! tolerances. Run with `cargo test --release --test acceptance -- --nocapture`
//! to see the lines.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use mfglab::carleman::{
    check_th4, doubling_search, evaluate_backward, make_backward, make_forward, mu_min, sweep, BackwardIntegrals,
    CarlemanWeight, CheckOptions, Domain, ForwardScheme, SearchBounds, SyntheticDatum, SyntheticSpec,
    TimeRule, SHIPPED_F3,
};
use mfglab::grid::{integrate, mixed_second_identity_check, Field, Grid};
use mfglab::inversion::reconstruct::Objective;
use mfglab::inversion::{inversion_solver_config, observe, CutoffParams, InversionProblem, ReconstructOptions};
use mfglab::model::{gaussian_density, Coupling, Hamiltonian, Kernel, MfgProblem, ProblemSpec, SourceProfile, SourceShape, SourceTerm};
use mfglab::runner::{self, certify_bounded_constants, CertifySpec, ExperimentConfig, RunManifest};
use mfglab::solver::{solve_fp_forward, solve_mfg, SolverConfig, TransportScheme};
use mfglab::stability::{
    build_linearized_coefficients, holder_experiment, lipschitz_experiment, perturbed_problem, predicted_eta,
    residual_of_difference_system, Perturbation,
};
use mfglab::tree::{build_tree, Children, ScenarioTree, TreeField, TreeKind};

/// Criteria that fail for a documented reason (see the README); the suite
/// asserts that exactly these fail, so a regression and an unexpected pass
/// are both reported.
const KNOWN_FAILURES: &[u32] = &[1];

struct Outcome {
    id: u32,
    passed: bool,
}

fn report(id: u32, name: &str, passed: bool, seconds: f64, detail: String) -> Outcome {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("{tag} [{id:>2}] {name} ({seconds:.1}s): {detail}");
    Outcome { id, passed }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn tight() -> SolverConfig {
    SolverConfig { picard_tol: 1e-12, picard_max_iters: 200, ..Default::default() }
}

// 1. backward whole-space sweep

fn backward_sweep() -> Outcome {
    let ((margins_ok, total, monotone, reports_decreasing), secs) = timed(|| {
        let g1 = Grid::new(1, 1.0, 128, 1.0, 64).unwrap();
        let g2 = Grid::new(1, 1.0, 256, 1.0, 128).unwrap();
        let t1 = build_tree(64, g1.dt(), true).unwrap();
        let t2 = build_tree(128, g2.dt(), true).unwrap();
        // (passes at the coarse grid, margin nondecreasing under doubling)
        let per_datum: Vec<Vec<(bool, bool)>> = (0..100u64)
            .into_par_iter()
            .map(|seed| {
                let spec = SyntheticSpec { seed, ..Default::default() };
                let mut out = Vec::new();
                for beta in [0.0, 0.5, 1.0] {
                    let coarse = BackwardIntegrals::new(&make_backward(&spec, g1, &t1, beta, None).unwrap(), Domain::Box).unwrap();
                    let fine = BackwardIntegrals::new(&make_backward(&spec, g2, &t2, beta, None).unwrap(), Domain::Box).unwrap();
                    for lambda in [1.0, 2.0, 4.0] {
                        for mu in [2.0, 4.0] {
                            let w = CarlemanWeight::new(lambda, mu, 1.0).unwrap();
                            let a = evaluate_backward(&coarse, &w, TimeRule::default(), false);
                            let b = evaluate_backward(&fine, &w, TimeRule::default(), false);
                            out.push((a.passes(0.05), b.margin >= a.margin));
                        }
                    }
                }
                out
            })
            .collect();
        let flat: Vec<&(bool, bool)> = per_datum.iter().flatten().collect();
        let margins_ok = flat.iter().filter(|c| c.0).count();
        let decreasing = flat.iter().filter(|c| !c.1).count();
        let monotone = per_datum.iter().filter(|d| d.iter().all(|c| c.1)).count();
        (margins_ok, flat.len(), monotone, decreasing)
    });
    let passed = margins_ok == total && monotone >= 95 && secs <= 600.0;
    report(
        1,
        "backward estimate sweep",
        passed,
        secs,
        format!(
            "margins within 5% in {margins_ok}/{total} reports; nondecreasing under (N, K) doubling for {monotone}/100 data \
             (need 95; {reports_decreasing}/{total} reports decrease)"
        ),
    )
}

// 2. forward whole-space estimate at the minimal admissible mu

fn forward_large_mu() -> Outcome {
    let ((finite, passing, count, worst), secs) = timed(|| {
        let grid = Grid::new(1, 1.0, 64, 1.0, 12).unwrap();
        let tree = build_tree(12, grid.dt(), false).unwrap();
        let data: Vec<SyntheticDatum> = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let spec = SyntheticSpec { seed: 1000 + seed, ..Default::default() };
                SyntheticDatum::Forward(make_forward(&spec, grid, &tree, 0.5, ForwardScheme::Implicit).unwrap())
            })
            .collect();
        let mu = mu_min(1.0);
        let lambdas: Vec<f64> = (0..=16).map(|i| 10f64.powf(-300.0 + 20.0 * i as f64)).collect();
        let reports = sweep(&lambdas, &[mu], data.len(), |l, m, i| {
            mfglab::carleman::check_th2(&data[i], &CarlemanWeight::new(l, m, 1.0)?, CheckOptions::default())
        })
        .unwrap();
        let finite = reports.iter().all(|r| {
            r.lhs_log.is_finite()
                && r.rhs_log.is_finite()
                && r.relative_margin.is_finite()
                && r.lhs_terms.iter().chain(&r.rhs_terms).all(|t| t.value.is_finite() && !t.log_value.is_nan())
        });
        let passing = reports.iter().filter(|r| r.passes(0.05)).count();
        let worst = reports.iter().map(|r| r.relative_margin).fold(f64::INFINITY, f64::min);
        (finite, passing, reports.len(), worst)
    });
    let passed = finite && passing == count && secs <= 300.0;
    report(
        2,
        "forward estimate at mu = 1296",
        passed,
        secs,
        format!("terms finite: {finite}; {passing}/{count} reports within 5% over lambda in [1e-300, 1e20]; worst relative margin {worst:.3}"),
    )
}

// 3. bounded-domain constant search

fn bounded_constants() -> Outcome {
    let ((th3, th4), secs) = timed(|| {
        let th3 = certify_bounded_constants(&CertifySpec::default(), 1.0, 77).unwrap();
        // forward data on G need beta = 0: the noise term -beta d1 p breaks the face conditions
        let grid = Grid::new(1, 1.0, 64, 1.0, 32).unwrap();
        let tree = build_tree(32, grid.dt(), true).unwrap();
        let data: Vec<SyntheticDatum> = (0..20u64)
            .map(|seed| {
                let spec = SyntheticSpec { seed: 500 + seed, odd_in_x1: true, ..Default::default() };
                SyntheticDatum::Forward(make_forward(&spec, grid, &tree, 0.0, ForwardScheme::Implicit).unwrap())
            })
            .collect();
        let bounds = SearchBounds { mu_start: mu_min(1.0), ..SearchBounds::default() };
        let th4 = doubling_search(data.len(), bounds, |l, m, i| check_th4(&data[i], &CarlemanWeight::new(l, m, 1.0)?, TimeRule::default()))
            .unwrap();
        (th3, th4)
    });
    let last3 = th3.steps.last().unwrap();
    let last4 = th4.steps.last().unwrap();
    let passed = SHIPPED_F3 != [0.0; 2] && last3.passed == 20 && last3.total == 20 && last4.passed == 20 && last4.total == 20;
    report(
        3,
        "bounded-domain constant search",
        passed,
        secs,
        format!(
            "f3 = {SHIPPED_F3:?}: (lambda0, mu0) = ({}, {}) with {}/{} after {} steps; forward (lambda0, mu0) = ({}, {}) with {}/{}",
            th3.lambda0,
            th3.mu0,
            last3.passed,
            last3.total,
            th3.steps.len(),
            th4.lambda0,
            th4.mu0,
            last4.passed,
            last4.total
        ),
    )
}

// 4. discrete mixed second-derivative identity

fn discrete_identity() -> Outcome {
    let (worst, secs) = timed(|| {
        let grid = Grid::new(2, 1.0, 32, 1.0, 1).unwrap();
        let pi = std::f64::consts::PI;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let coeffs: Vec<(i32, i32, f64, f64)> = (0..12)
                .map(|_| (rng.random_range(0..8), rng.random_range(-7..8), rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let f = Field::from_fn(grid, |x| {
                coeffs.iter().map(|&(a, b, s, c)| {
                    let arg = pi * (a as f64 * x[0] + b as f64 * x[1]);
                    s * arg.sin() + c * arg.cos()
                })
                .sum()
            });
            let (l, r) = mixed_second_identity_check(&f).unwrap();
            worst = worst.max((l - r).abs() / r.abs().max(f64::MIN_POSITIVE));
        }
        worst
    });
    report(4, "mixed second-derivative identity", worst <= 1e-10, secs, format!("worst relative difference {worst:.2e} over 50 fields"))
}

// 5. solver physics

fn martingale_residual(tree: &ScenarioTree, u: &TreeField<Field>, big_u: &TreeField<Field>) -> f64 {
    let s = tree.dt().sqrt();
    let mut worst = 0.0f64;
    for node in tree.nodes() {
        if let Children::Binary { plus, minus } = node.children {
            let m = u.get(plus).zip_map(u.get(minus), |a, b| 0.5 * (a + b));
            let up = Field::lincomb(&m, 1.0, big_u.get(node.id), s);
            let dn = Field::lincomb(&m, 1.0, big_u.get(node.id), -s);
            worst = worst.max(up.sub(u.get(plus)).max_abs()).max(dn.sub(u.get(minus)).max_abs());
        }
    }
    worst
}

fn plain_problem(grid: Grid, kind: TreeKind, beta: f64, coupled: bool) -> MfgProblem {
    let tree = ScenarioTree::new(grid.steps(), grid.dt(), kind).unwrap();
    let (h, k, c) = if coupled {
        (Hamiltonian::Quadratic, Kernel::from_id("gaussian").unwrap(), Coupling::Linear { c1: 0.1, c2: 0.05 })
    } else {
        (Hamiltonian::Zero, Kernel::None, Coupling::Zero)
    };
    let l = grid.half_width();
    let terminal = Field::from_fn(grid, |x| 0.3 * (std::f64::consts::PI * x[0] / l).cos());
    MfgProblem::new(grid, tree, h, k, c, SourceTerm::default(), beta, terminal, gaussian_density(grid, [0.0; 2], 0.3)).unwrap()
}

fn solver_physics() -> Outcome {
    let ((mass, var_err, mart, mart_scale, collapse), secs) = timed(|| {
        // mass over a full coupled run
        let problem = ProblemSpec::preset("coupled").unwrap().build().unwrap();
        let sol = solve_mfg(&problem, &tight()).unwrap();
        let m0 = integrate(&problem.initial_density);
        let mass = sol.rho.iter().map(|f| (integrate(f) - m0).abs()).fold(0.0, f64::max);
        let mart = martingale_residual(&problem.tree, &sol.u, &sol.big_u);
        let mart_scale = sol.u.iter().fold(0.0f64, |m, f| m.max(f.max_abs()));

        // heat kernel: drift-free, noiseless, variance sigma0^2 + 2 (1/2) T
        let grid = Grid::new(1, 8.0, 128, 1.0, 64).unwrap();
        let p = plain_problem(grid, TreeKind::Degenerate, 0.0, false);
        let u = TreeField::filled(&p.tree, Field::zeros(grid));
        let rho = solve_fp_forward(&p, &u, &SolverConfig::default(), &mut Vec::new()).unwrap();
        let f = rho.get(p.tree.leaves()[0]);
        let x = Field::from_fn(grid, |x| x[0]);
        let (a, b, c) = (integrate(f), integrate(&f.mul(&x)), integrate(&f.mul(&x).mul(&x)));
        let var = c / a - (b / a).powi(2);
        let expected = 0.09 + 1.0;
        let var_err = ((var - expected) / expected).abs();

        // beta = 0: every tree collapses onto the deterministic path
        let grid = Grid::new(1, 2.0, 32, 0.5, 8).unwrap();
        let reference = plain_problem(grid, TreeKind::Degenerate, 0.0, true);
        let rs = solve_mfg(&reference, &tight()).unwrap();
        let mut collapse = 0.0f64;
        for kind in [TreeKind::Full, TreeKind::Recombining] {
            let p = plain_problem(grid, kind, 0.0, true);
            let s = solve_mfg(&p, &tight()).unwrap();
            for d in 0..=grid.steps() {
                let r = reference.tree.level(d)[0];
                for &id in p.tree.level(d) {
                    collapse = collapse
                        .max(s.u.get(id).sub(rs.u.get(r)).max_abs())
                        .max(s.rho.get(id).sub(rs.rho.get(r)).max_abs())
                        .max(s.big_u.get(id).max_abs());
                }
            }
        }
        (mass, var_err, mart, mart_scale, collapse)
    });
    // the representation is exact in real arithmetic; the floating point
    // evaluation of m + U sqrt(dt) rounds at the last place
    let mart_ok = mart <= 4.0 * f64::EPSILON * mart_scale;
    let passed = mass <= 1e-8 && var_err <= 0.01 && mart_ok && collapse <= 1e-12;
    report(
        5,
        "solver physics",
        passed,
        secs,
        format!(
            "mass error {mass:.2e}; heat-kernel variance error {:.3}%; martingale residual {mart:.2e} ({:.1} ulp of max |u|); tree collapse {collapse:.2e}",
            100.0 * var_err,
            mart / (f64::EPSILON * mart_scale)
        ),
    )
}

// 6. linearization coverage

fn difference_residual(name: &str, points: usize, steps: usize) -> f64 {
    let problem = ProblemSpec::preset(name).unwrap().with_resolution(points, steps).build().unwrap();
    let cfg = SolverConfig { picard_tol: 1e-13, picard_max_iters: 200, ..Default::default() };
    let s1 = solve_mfg(&problem, &cfg).unwrap();
    let s2 = solve_mfg(&perturbed_problem(&problem, &Perturbation::smooth(&problem, 1), 0.1).unwrap(), &cfg).unwrap();
    let c = build_linearized_coefficients(&problem, &s1, &s2).unwrap();
    let r = residual_of_difference_system(&problem, &s1, &s2, &c, TransportScheme::Upwind).unwrap();
    r.fp + r.hjb
}

fn linearization() -> Outcome {
    let ((coupled, affine), secs) = timed(|| {
        let coupled: Vec<f64> = [(32, 16), (64, 32), (128, 64)].iter().map(|&(n, k)| difference_residual("coupled", n, k)).collect();
        (coupled, difference_residual("affine", 64, 32))
    });
    let orders: Vec<f64> = coupled.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let passed = orders.iter().all(|o| *o >= 1.0) && affine <= 1e-10;
    report(
        6,
        "linearization coverage",
        passed,
        secs,
        format!(
            "coupled residuals {:.3e} / {:.3e} / {:.3e}, observed orders {:.2}, {:.2}; affine residual {affine:.2e}",
            coupled[0], coupled[1], coupled[2], orders[0], orders[1]
        ),
    )
}

// 7. Lipschitz twins

fn lipschitz() -> Outcome {
    let ((coupled, decoupled), secs) = timed(|| {
        let deltas = [1e-1, 1e-2, 1e-3];
        let problem = ProblemSpec::preset("coupled").unwrap().build().unwrap();
        let fam: Vec<Perturbation> = (1..=2).map(|m| Perturbation::smooth(&problem, m)).collect();
        let coupled = lipschitz_experiment(&problem, &tight(), &fam, &deltas).unwrap();
        let problem = ProblemSpec::preset("decoupled").unwrap().build().unwrap();
        let fam: Vec<Perturbation> = (1..=2).map(|m| Perturbation::smooth(&problem, m)).collect();
        let decoupled = lipschitz_experiment(&problem, &tight(), &fam, &deltas).unwrap();
        (coupled, decoupled)
    });
    // constancy of the decoupled model is per perturbation: the response is linear in delta
    let per_pert_spread = |fit: &mfglab::stability::StabilityFit| {
        let mut worst = 1.0f64;
        for name in fit.runs.iter().map(|r| r.perturbation.clone()) {
            let ratios: Vec<f64> = fit.runs.iter().filter(|r| r.perturbation == name).map(|r| r.ratio).collect();
            let (hi, lo) = ratios.iter().fold((0.0f64, f64::INFINITY), |(h, l), &r| (h.max(r), l.min(r)));
            worst = worst.max(hi / lo);
        }
        worst
    };
    let dec = per_pert_spread(&decoupled);
    let all_converged = coupled.excluded.is_empty() && decoupled.excluded.is_empty();
    let passed = coupled.delta_spread < 10.0 && dec <= 1.1 && all_converged && secs <= 1200.0;
    report(
        7,
        "Lipschitz stability twins",
        passed,
        secs,
        format!(
            "coupled fitted_C {:.4} with spread x{:.4} across three decades; decoupled ratio constant to x{dec:.6}",
            coupled.fitted_c, coupled.delta_spread
        ),
    )
}

// 8. Hölder twins

fn holder() -> Outcome {
    let ((mu0, fit, sanity), secs) = timed(|| {
        let problem = ProblemSpec::preset("coupled").unwrap().build().unwrap();
        let horizon = problem.grid.horizon();
        let cert = certify_bounded_constants(&CertifySpec::default(), horizon, 77).unwrap();
        let fam: Vec<Perturbation> = (1..=5).map(|m| Perturbation::density_mode(&problem, m, 0.05)).collect();
        let fit = holder_experiment(&problem, &tight(), 0.25 * horizon, &fam, cert.mu0).unwrap();
        (cert.mu0, fit, predicted_eta(1.0, 2.0, 2.0).unwrap())
    });
    let (f, p) = (fit.fitted_eta.unwrap_or(f64::NAN), fit.predicted_eta.unwrap_or(f64::NAN));
    let passed = f >= p - 0.1 && (sanity - 5.0 / 12.0).abs() <= 1e-15 && fit.excluded.is_empty();
    report(
        8,
        "Hölder stability twins",
        passed,
        secs,
        format!("fitted slope {f:.4} vs predicted eta {p:.4e} at certified mu0 = {mu0}; eta(1, 2, 2) = {sanity:.15}"),
    )
}

// 9. source inversion

fn twin_config(dir: &Path, noise: f64, alpha: Option<f64>, certificate: bool) -> ExperimentConfig {
    let mut c = ExperimentConfig::for_command(runner::Command::InvertSource);
    c.seed = 9;
    c.output_dir = Some(dir.to_path_buf());
    c.grid.points = Some(64);
    c.grid.steps = Some(32);
    c.model.source = Some(SourceTerm { r: SourceProfile::Zero, shape: twin_shape() });
    c.inversion.noise = noise;
    c.inversion.alpha = alpha;
    c.inversion.certificate = certificate;
    c
}

fn twin_shape() -> SourceShape {
    SourceShape { base: 1.0, amp: 0.5, growth: 0.5, width: 0.5, center: [0.5, 0.0] }
}

fn gradient_check() -> f64 {
    let mut spec = ProblemSpec::preset("coupled").unwrap();
    spec.source = SourceTerm { r: SourceProfile::Zero, shape: twin_shape() };
    let ip = InversionProblem::new(spec.build().unwrap(), CutoffParams::default_for(1.0), None).unwrap();
    let truth = ip.sample_profile(&SourceProfile::Smooth { amp: 0.5, omega: 2.0 * std::f64::consts::PI });
    let obs = observe(&ip, &ip.solve(&truth, &inversion_solver_config(), None).unwrap());
    let obj = Objective::new(&ip, &obs, ReconstructOptions { alpha: 1e-3, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let r0: Vec<f64> = truth.iter().map(|v| v + 0.3 * (rng.random::<f64>() - 0.5)).collect();
    let (_, g) = obj.evaluate(&r0).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let d: Vec<f64> = (0..r0.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        let at = |s: f64| {
            let r: Vec<f64> = r0.iter().zip(&d).map(|(a, b)| a + s * b / n).collect();
            obj.evaluate(&r).unwrap().0.total
        };
        let e = 1e-4;
        let fd = (at(e) - at(-e)) / (2.0 * e);
        let ad: f64 = g.iter().zip(&d).map(|(a, b)| a * b / n).sum();
        worst = worst.max((fd - ad).abs() / fd.abs().max(ad.abs()).max(f64::MIN_POSITIVE));
    }
    worst
}

fn summary_f64(m: &RunManifest, key: &str) -> f64 {
    m.summary[key].as_f64().unwrap_or(f64::NAN)
}

fn inversion(root: &Path) -> Outcome {
    let ((grad, clean, noisy), secs) = timed(|| {
        let grad = gradient_check();
        let clean = runner::run(&twin_config(&root.join("clean"), 0.0, Some(1e-8), true));
        let noisy = runner::run(&twin_config(&root.join("noisy"), 0.01, None, false));
        (grad, clean, noisy)
    });
    let clean_err = summary_f64(&clean, "relative_l2_error");
    let cert = summary_f64(&clean, "certificate");
    let noisy_err = summary_f64(&noisy, "relative_l2_error");
    let passed = clean.exit_code == 0
        && noisy.exit_code == 0
        && clean_err <= 0.05
        && grad <= 1e-5
        && cert <= 1e-3
        && noisy_err <= 0.2
        && secs <= 1800.0;
    report(
        9,
        "source inversion twins",
        passed,
        secs,
        format!(
            "noise-free error {clean_err:.2e}; gradient check {grad:.2e}; certificate {cert:.2e}; 1% noise error {noisy_err:.3} at alpha {} (exit codes {}, {})",
            noisy.summary["alpha"], clean.exit_code, noisy.exit_code
        ),
    )
}

// 10. determinism

fn reduced_configs() -> Vec<(&'static str, String)> {
    vec![
        ("simulate", r#"{"command": "simulate", "seed": 1, "grid": {"N": 32, "K": 8}}"#.into()),
        (
            "verify-carleman",
            r#"{"command": "verify-carleman", "seed": 2, "grid": {"N": 32, "K": 8},
                "carleman": {"data": 4, "lambdas": [1.0, 2.0], "mus": [2.0], "betas": [0.0, 0.5]}}"#
                .into(),
        ),
        (
            "verify-carleman-search",
            r#"{"command": "verify-carleman", "seed": 3, "grid": {"N": 32, "K": 8},
                "carleman": {"theorem": "th3", "data": 4, "search": {"lambda_start": 1.0, "mu_start": 1.0, "doublings": 8, "slack": 0.05}}}"#
                .into(),
        ),
        (
            "stability-lipschitz",
            r#"{"command": "stability-twin", "seed": 4, "grid": {"N": 32, "K": 8}, "stability": {"modes": [1, 2], "deltas": [0.1, 0.01]}}"#
                .into(),
        ),
        (
            "stability-holder",
            r#"{"command": "stability-twin", "seed": 5, "grid": {"N": 32, "K": 8},
                "stability": {"mode": "holder", "modes": [1, 2, 3], "certify": {"N": 32, "K": 8, "data": 4}}}"#
                .into(),
        ),
        (
            "invert-source",
            r#"{"command": "invert-source", "seed": 6, "grid": {"N": 16, "K": 8},
                "model": {"source": {"shape": {"base": 1.0, "amp": 0.5, "growth": 0.5, "width": 0.5, "center": [0.5, 0.0]}}},
                "inversion": {"noise": 0.01, "alphas": [1e-2, 1e-3, 1e-4], "max_iters": 40}}"#
                .into(),
        ),
    ]
}

fn determinism(root: &Path, clean: &Path) -> Outcome {
    let ((mismatches, runs, files), secs) = timed(|| {
        let mut mismatches = Vec::new();
        let mut files = 0;
        let configs = reduced_configs();
        for (name, text) in &configs {
            let mut checksums = Vec::new();
            for (rep, threads) in [1usize, 2, 1].iter().enumerate() {
                let mut c = ExperimentConfig::from_json(text).unwrap();
                c.output_dir = Some(root.join(format!("{name}-{rep}")));
                let m = runner::with_threads(*threads, || runner::run(&c)).unwrap();
                assert_eq!(m.exit_code, 0, "{name}: {:?}", m.failure);
                checksums.push(m.checksums());
            }
            files += checksums[0].len();
            if checksums.iter().any(|c| c != &checksums[0]) {
                mismatches.push(name.to_string());
            }
        }
        // the full-size noise-free inversion again, on two workers
        let c = twin_config(&root.join("clean-2"), 0.0, Some(1e-8), true);
        let again = runner::with_threads(2, || runner::run(&c)).unwrap();
        let first: RunManifest = serde_json::from_slice(&std::fs::read(clean.join("manifest.json")).unwrap()).unwrap();
        if first.checksums() != again.checksums() {
            mismatches.push("invert-source N=64".into());
        }
        (mismatches, configs.len() * 3 + 1, files)
    });
    report(
        10,
        "determinism across repeats and worker counts",
        mismatches.is_empty(),
        secs,
        if mismatches.is_empty() {
            format!("{runs} runs, {files} checksummed outputs over the reduced configs, all identical")
        } else {
            format!("checksums differ for {mismatches:?}")
        },
    )
}

#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let outcomes = vec![
        backward_sweep(),
        forward_large_mu(),
        bounded_constants(),
        discrete_identity(),
        solver_physics(),
        linearization(),
        lipschitz(),
        holder(),
        inversion(root),
        determinism(&root.join("repeat"), &root.join("clean")),
    ];
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!(
        "acceptance: {}/{} criteria pass; failing {failed:?}; known failures {KNOWN_FAILURES:?}",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    assert_eq!(failed, KNOWN_FAILURES, "failing criteria differ from the documented set");
}
