//! Definitional examples of every module, checked at run time.

use serde::{Deserialize, Serialize};

use super::{capacity_guard, RunContext};
use crate::carleman::{
    check_th1, check_th2, check_th3, make_backward, make_forward, mu_min, CarlemanWeight, CheckOptions, ForwardScheme,
    SyntheticDatum, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::grid::{gradient, integrate, laplacian, partial, sobolev_norms, Backend, Field, Grid};
use crate::inversion::{
    add_noise, cutoff_chi, inversion_solver_config, observe, uniqueness_certificate, verify_theorem3_transformations,
    CutoffParams, InversionProblem, NoiseSpec, ReconstructOptions,
};
use crate::model::{
    validate_assumptions, AssumptionLimits, Coupling, Hamiltonian, InitialSpec, ProblemSpec, SourceProfile, SourceShape,
    SourceTerm, TerminalSpec,
};
use crate::solver::{solve_mfg, SolverConfig, TransportScheme};
use crate::stability::{
    build_linearized_coefficients, lipschitz_experiment, predicted_eta, residual_of_difference_system, Perturbation,
};
use crate::tree::{conditional_expectation, martingale_part, Children, ScenarioTree, TreeField, TreeKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

struct Suite(Vec<CheckRecord>);

impl Suite {
    fn case(&mut self, name: &str, f: impl FnOnce() -> Result<(bool, String)>) {
        let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        self.0.push(CheckRecord { name: name.to_string(), passed, detail });
    }
}

fn close(a: f64, b: f64, tol: f64) -> (bool, String) {
    ((a - b).abs() <= tol, format!("{a:e} vs {b:e}"))
}

fn delta(grid: Grid, j: usize) -> Result<Field> {
    let mut v = vec![0.0; grid.len()];
    v[j] = 1.0;
    Field::from_values(grid, v)
}

fn tight() -> SolverConfig {
    SolverConfig { picard_tol: 1e-12, picard_max_iters: 200, ..SolverConfig::default() }
}

fn small(preset: &str, points: usize, steps: usize) -> Result<ProblemSpec> {
    Ok(ProblemSpec::preset(preset)?.with_resolution(points, steps))
}

fn grid_cases(s: &mut Suite) {
    s.case("grid/gradient_of_constant", || {
        let g = Grid::new(2, 1.0, 16, 1.0, 1)?;
        let f = Field::constant(g, 3.5);
        let worst = [Backend::Central, Backend::Spectral]
            .iter()
            .flat_map(|&b| gradient(&f, b))
            .map(|d| d.max_abs())
            .fold(0.0, f64::max);
        Ok((worst == 0.0, format!("max |grad c| = {worst:e}")))
    });
    s.case("grid/central_stencil_of_delta", || {
        let g = Grid::new(1, 1.0, 16, 1.0, 1)?;
        let h = g.spacing();
        let d = partial(&delta(g, 5)?, 0, Backend::Central);
        let v = d.values();
        let ok = v[4] == 0.5 / h && v[6] == -0.5 / h && v.iter().enumerate().all(|(i, x)| i == 4 || i == 6 || *x == 0.0);
        Ok((ok, format!("({}, {}, {}) h", v[4] * h, v[5] * h, v[6] * h)))
    });
    s.case("grid/laplacian_of_constant", || {
        let g = Grid::new(2, 1.0, 16, 1.0, 1)?;
        let m = laplacian(&Field::constant(g, -2.0), Backend::Central).max_abs();
        Ok((m == 0.0, format!("{m:e}")))
    });
    s.case("grid/laplacian_stencil_of_delta", || {
        let g = Grid::new(1, 1.0, 16, 1.0, 1)?;
        let h2 = g.spacing() * g.spacing();
        let v = laplacian(&delta(g, 5)?, Backend::Central).into_values();
        let ok = (v[4] * h2 - 1.0).abs() < 1e-12 && (v[5] * h2 + 2.0).abs() < 1e-12 && (v[6] * h2 - 1.0).abs() < 1e-12;
        Ok((ok, format!("({}, {}, {}) / h^2", v[4] * h2, v[5] * h2, v[6] * h2)))
    });
    s.case("grid/integral_of_one_is_box_volume", || {
        let mut worst: f64 = 0.0;
        for n in [1, 2] {
            let g = Grid::new(n, 1.5, 24, 1.0, 1)?;
            worst = worst.max((integrate(&Field::constant(g, 1.0)) - 3f64.powi(n as i32)).abs());
        }
        Ok((worst <= 1e-12, format!("{worst:e}")))
    });
    s.case("grid/integral_of_odd_function", || {
        let g = Grid::new(1, 2.0, 64, 1.0, 1)?;
        let f = Field::from_fn(g, |x| (std::f64::consts::PI * x[0] / 2.0).sin() * (1.0 + x[0] * x[0]));
        let v = integrate(&f);
        Ok((v.abs() <= 1e-13, format!("{v:e}")))
    });
    s.case("grid/zero_trajectory_norms", || {
        let g = Grid::new(1, 1.0, 16, 1.0, 4)?;
        let tree = ScenarioTree::new(4, g.dt(), TreeKind::Recombining)?;
        let r = sobolev_norms(&TreeField::filled(&tree, Field::zeros(g)), &tree)?;
        let all = [r.l2_space, r.h1_space, r.l2_time_h1, r.l2_time_l2, r.linf];
        Ok((all.iter().all(|v| *v == 0.0), format!("{all:?}")))
    });
    s.case("grid/constant_trajectory_l2_norm", || {
        let g = Grid::new(1, 1.5, 16, 0.8, 4)?;
        let tree = ScenarioTree::new(4, g.dt(), TreeKind::Degenerate)?;
        let r = sobolev_norms(&TreeField::filled(&tree, Field::constant(g, 1.0)), &tree)?;
        Ok(close(r.l2_time_l2, (0.8 * g.box_volume()).sqrt(), 1e-12))
    });
    s.case("grid/signed_subtrees_reproduce_norm", || {
        let g = Grid::new(1, 1.0, 16, 1.0, 3)?;
        let tree = ScenarioTree::new(3, g.dt(), TreeKind::Full)?;
        let a = 0.7;
        // sign of the first increment on the path to each node
        let mut first = vec![1.0; tree.len()];
        for n in tree.nodes() {
            if let Some(p) = n.parent {
                first[n.id] = if n.depth == 1 { n.sign as f64 } else { first[p] };
            }
        }
        let signed = TreeField::from_fn(&tree, |id| Field::constant(g, a * first[id]));
        let flat = TreeField::filled(&tree, Field::constant(g, a));
        let (x, y) = (sobolev_norms(&signed, &tree)?, sobolev_norms(&flat, &tree)?);
        Ok(close(x.l2_time_l2, y.l2_time_l2, 1e-14))
    });
}

fn tree_cases(s: &mut Suite) {
    s.case("tree/full_depth_two", || {
        let t = ScenarioTree::new(2, 0.5, TreeKind::Full)?;
        let probs: Vec<f64> = t.leaves().iter().map(|&l| t.node(l).prob).collect();
        Ok((t.len() == 7 && probs.iter().all(|p| *p == 0.25), format!("{} nodes, leaves {probs:?}", t.len())))
    });
    s.case("tree/recombining_depth_two", || {
        let t = ScenarioTree::new(2, 0.5, TreeKind::Recombining)?;
        let mid = t.node(t.leaves()[1]).prob;
        Ok((t.len() == 6 && mid == 0.5, format!("{} nodes, middle leaf {mid}", t.len())))
    });
    s.case("tree/terminal_moments", || {
        let mut ok = true;
        let mut detail = String::new();
        for kind in [TreeKind::Full, TreeKind::Recombining] {
            let (k, dt) = (6, 0.125);
            let t = ScenarioTree::new(k, dt, kind)?;
            let mean = t.expectation_at_depth(k, |id| t.node(id).w);
            let var = t.expectation_at_depth(k, |id| t.node(id).w.powi(2));
            ok &= mean.abs() <= 1e-15 && (var - k as f64 * dt).abs() <= 1e-14;
            detail.push_str(&format!("{kind:?}: E = {mean:e}, Var = {var}; "));
        }
        Ok((ok, detail))
    });
    s.case("tree/conditional_expectation", || {
        let g = Grid::new(1, 1.0, 8, 1.0, 1)?;
        let f = Field::from_fn(g, |x| x[0].sin());
        let a = conditional_expectation(&1.0, &3.0);
        let same = conditional_expectation(&f, &f).sub(&f).max_abs();
        let anti = conditional_expectation(&f, &f.scaled(-1.0)).max_abs();
        Ok((a == 2.0 && same == 0.0 && anti == 0.0, format!("{a}, {same:e}, {anti:e}")))
    });
    s.case("tree/martingale_part", || {
        let u = martingale_part(&3.0, &1.0, 0.25);
        let z = martingale_part(&1.5, &1.5, 0.25);
        Ok((u == 2.0 && z == 0.0, format!("{u}, {z}")))
    });
}

fn model_cases(s: &mut Suite) {
    s.case("model/quadratic_hamiltonian_value", || {
        let v = Hamiltonian::Quadratic.b(0.0, [0.0; 2], [2.0, 0.0]);
        Ok((v == -2.0, format!("{v}")))
    });
    s.case("model/zero_momentum_gradient", || {
        let g = Hamiltonian::Quadratic.grad_p(0.0, [0.3, 0.0], [0.0, 0.0]);
        Ok((g == [0.0, 0.0], format!("{g:?}")))
    });
    s.case("model/product_coupling_at_zero_density", || {
        let mut spec = small("coupled", 16, 2)?;
        spec.coupling = Coupling::Product;
        let p = spec.build()?;
        let rho = Field::zeros(p.grid);
        let y = p.kernel.apply(&rho);
        let worst = (0..p.grid.len()).map(|i| p.coupling.value(y.values()[i], 0.0).abs()).fold(0.0, f64::max);
        Ok((worst == 0.0, format!("{worst:e}")))
    });
    s.case("model/quadratic_constant_hessian", || {
        let h = Hamiltonian::Quadratic;
        let p = [0.7, -1.3];
        let hess = h.hess_pp(0.0, [0.0; 2], p);
        let third = h.third_ppp(0.0, [0.0; 2], p);
        let ok = hess == [[-1.0, 0.0], [0.0, -1.0]] && third.iter().flatten().flatten().all(|v| *v == 0.0);
        let spec = small("coupled", 16, 2)?;
        let prob = spec.build()?;
        let zero = TreeField::filled(&prob.tree, Field::zeros(prob.grid));
        let limits = AssumptionLimits { m1: 3.0, m2: 10.0, m3: 10.0 };
        let c = validate_assumptions(&prob, &zero, &zero, limits).bounds.c_of_m1;
        Ok((ok && c == 1.0, format!("hessian {hess:?}, C(M1) = {c}")))
    });
    s.case("model/zero_pair_assumption_norms", || {
        let prob = small("coupled", 16, 2)?.build()?;
        let zero = TreeField::filled(&prob.tree, Field::zeros(prob.grid));
        let r = validate_assumptions(&prob, &zero, &zero, AssumptionLimits { m1: 1.0, m2: 10.0, m3: 1.0 });
        Ok((r.observed_m3 == 0.0 && r.solution_pass, format!("observed M3 = {}", r.observed_m3)))
    });
}

fn solver_cases(s: &mut Suite) {
    s.case("solver/mass_conservation", || {
        let p = small("coupled", 32, 8)?.build()?;
        let sol = solve_mfg(&p, &tight())?;
        let worst = sol.rho.iter().map(|r| (integrate(r) - 1.0).abs()).fold(0.0, f64::max);
        Ok((worst <= 1e-8, format!("{worst:e}")))
    });
    s.case("solver/noise_free_has_no_martingale_part", || {
        let mut spec = small("decoupled", 32, 8)?;
        spec.beta = 0.0;
        let p = spec.build()?;
        let sol = solve_mfg(&p, &tight())?;
        let m = sol.big_u.iter().map(|f| f.max_abs()).fold(0.0, f64::max);
        Ok((m == 0.0, format!("max |U| = {m:e}")))
    });
    s.case("solver/martingale_representation", || {
        let mut spec = small("coupled", 32, 5)?;
        spec.tree = TreeKind::Full;
        let p = spec.build()?;
        let sol = solve_mfg(&p, &tight())?;
        let sq = p.tree.dt().sqrt();
        let (mut worst, mut scale) = (0.0f64, 0.0f64);
        for node in p.tree.nodes() {
            if let Children::Binary { plus, minus } = node.children {
                let m = conditional_expectation(sol.u.get(plus), sol.u.get(minus));
                let up = Field::lincomb(&m, 1.0, sol.big_u.get(node.id), sq);
                let dn = Field::lincomb(&m, 1.0, sol.big_u.get(node.id), -sq);
                worst = worst.max(up.sub(sol.u.get(plus)).max_abs()).max(dn.sub(sol.u.get(minus)).max_abs());
                scale = scale.max(sol.u.get(plus).max_abs());
            }
        }
        Ok((worst <= 4.0 * f64::EPSILON * scale, format!("{worst:e} at scale {scale:.3}")))
    });
    s.case("solver/decoupled_converges_in_one_sweep", || {
        let p = small("decoupled", 32, 8)?.build()?;
        let sol = solve_mfg(&p, &SolverConfig::default())?;
        let r = &sol.picard_residuals;
        Ok((sol.converged && r.len() == 2 && r[1] == 0.0, format!("{r:?}")))
    });
    s.case("solver/noise_free_tree_collapse", || {
        let mut spec = small("coupled", 32, 8)?;
        spec.beta = 0.0;
        let a = solve_mfg(&spec.build()?, &tight())?;
        spec.tree = TreeKind::Degenerate;
        let pd = spec.build()?;
        let b = solve_mfg(&pd, &tight())?;
        let pr = ProblemSpec { tree: TreeKind::Recombining, ..spec.clone() }.build()?;
        let mut worst = 0.0f64;
        for d in 0..=pr.tree.steps() {
            let reference = pd.tree.level(d)[0];
            for &id in pr.tree.level(d) {
                worst = worst.max(a.rho.get(id).sub(b.rho.get(reference)).max_abs());
                worst = worst.max(a.u.get(id).sub(b.u.get(reference)).max_abs());
            }
        }
        Ok((worst <= 1e-12, format!("{worst:e}")))
    });
}

fn carleman_cases(s: &mut Suite) {
    s.case("carleman/zero_lambda_weight", || {
        let w = CarlemanWeight::new(0.0, 3.0, 1.0)?;
        let ok = [0.0, 0.4, 1.0].iter().all(|&t| w.weight_log(t) == 0.0 && w.normalized_theta_sq(t) == 1.0);
        Ok((ok, "l = 0, theta = 1".into()))
    });
    s.case("carleman/unit_weight_at_origin", || {
        let w = CarlemanWeight::new(1.0, 1.0, 1.0)?;
        let l = w.weight_log(0.0);
        Ok(((l - 2.0).abs() <= 1e-15 && (l.exp() - 2f64.exp()).abs() <= 1e-14, format!("l = {l}")))
    });
    s.case("carleman/normalized_weight_at_horizon", || {
        let w = CarlemanWeight::new(100.0, 4.0, 1.0)?;
        let raw = (2.0 * w.weight_log(1.0)).exp();
        let n = w.normalized_theta_sq(1.0);
        Ok((raw.is_infinite() && n == 1.0, format!("raw {raw}, normalized {n}")))
    });
    s.case("carleman/mu_min_half_horizon", || Ok(close(mu_min(0.5), 900.0, 0.0)));
    let grid = || Grid::new(1, 1.0, 32, 1.0, 8);
    let zero = SyntheticSpec { amplitude: 0.0, ..SyntheticSpec::default() };
    s.case("carleman/zero_seed_data", || {
        let g = grid()?;
        let rt = ScenarioTree::new(8, g.dt(), TreeKind::Recombining)?;
        let ft = ScenarioTree::new(8, g.dt(), TreeKind::Full)?;
        let b = make_backward(&zero, g, &rt, 0.5, None)?;
        let f = make_forward(&zero, g, &ft, 0.5, ForwardScheme::Implicit)?;
        let m = b.f1.iter().chain(f.g1.iter()).map(|x| x.max_abs()).fold(0.0, f64::max);
        Ok((m == 0.0, format!("{m:e}")))
    });
    s.case("carleman/datum_residuals", || {
        let g = grid()?;
        let rt = ScenarioTree::new(8, g.dt(), TreeKind::Recombining)?;
        let ft = ScenarioTree::new(8, g.dt(), TreeKind::Full)?;
        let spec = SyntheticSpec { seed: 11, ..SyntheticSpec::default() };
        let b = make_backward(&spec, g, &rt, 0.5, Some([0.3, 0.0]))?.residual();
        let f = make_forward(&spec, g, &ft, 0.5, ForwardScheme::Implicit)?.residual();
        Ok((b <= 1e-12 && f <= 1e-12, format!("backward {b:e}, forward {f:e}")))
    });
    s.case("carleman/zero_backward_report", || {
        let g = grid()?;
        let rt = ScenarioTree::new(8, g.dt(), TreeKind::Recombining)?;
        let d = SyntheticDatum::Backward(make_backward(&zero, g, &rt, 0.5, None)?);
        let r = check_th1(&d, &CarlemanWeight::new(2.0, 2.0, 1.0)?, CheckOptions::default())?;
        let r3 = check_th3(&d, &CarlemanWeight::new(2.0, 2.0, 1.0)?, Default::default())?;
        let ok = [r.lhs_total, r.rhs_total, r.margin, r3.lhs_total, r3.rhs_total, r3.margin].iter().all(|v| *v == 0.0);
        Ok((ok, format!("th1 margin {}, th3 margin {}", r.margin, r3.margin)))
    });
    s.case("carleman/unit_beta_divergence_term", || {
        let g = grid()?;
        let rt = ScenarioTree::new(8, g.dt(), TreeKind::Recombining)?;
        let spec = SyntheticSpec { seed: 5, ..SyntheticSpec::default() };
        let d = SyntheticDatum::Backward(make_backward(&spec, g, &rt, 1.0, None)?);
        let r = check_th1(&d, &CarlemanWeight::new(1.0, 2.0, 1.0)?, CheckOptions::default())?;
        let v = r.term("div_f2").map(|t| t.value).unwrap_or(f64::NAN);
        Ok((v == 0.0, format!("{v:e}")))
    });
    s.case("carleman/zero_forward_report", || {
        let g = grid()?;
        let ft = ScenarioTree::new(8, g.dt(), TreeKind::Full)?;
        let d = SyntheticDatum::Forward(make_forward(&zero, g, &ft, 0.5, ForwardScheme::Implicit)?);
        let r = check_th2(&d, &CarlemanWeight::new(1.0, mu_min(1.0), 1.0)?, CheckOptions::default())?;
        let all = r.lhs_terms.iter().chain(&r.rhs_terms).all(|t| t.value == 0.0);
        Ok((all, format!("margin {}", r.margin)))
    });
}

fn stability_cases(s: &mut Suite) {
    s.case("stability/identical_pair_coefficients", || {
        let p = small("coupled", 32, 8)?.build()?;
        let sol = solve_mfg(&p, &tight())?;
        let c = build_linearized_coefficients(&p, &sol, &sol)?;
        let mut worst = 0.0f64;
        for (id, n) in c.nodes.iter().enumerate() {
            let g = gradient(sol.u.get(id), Backend::Central);
            worst = worst.max(n.b5[0].add(&g[0]).max_abs());
            worst = worst.max(n.b4[0][0].add(sol.rho.get(id)).max_abs());
        }
        Ok((worst <= 1e-12, format!("{worst:e}")))
    });
    s.case("stability/identical_pair_residual", || {
        let p = small("coupled", 32, 8)?.build()?;
        let sol = solve_mfg(&p, &tight())?;
        let c = build_linearized_coefficients(&p, &sol, &sol)?;
        let r = residual_of_difference_system(&p, &sol, &sol, &c, TransportScheme::Upwind)?;
        Ok((r.fp == 0.0 && r.hjb == 0.0, format!("{r:?}")))
    });
    s.case("stability/identical_data_ratio", || {
        let p = small("coupled", 32, 8)?.build()?;
        let fit = lipschitz_experiment(&p, &tight(), &[Perturbation::smooth(&p, 1)], &[0.0])?;
        let r = &fit.runs[0];
        Ok((r.lhs == 0.0 && r.rhs == 0.0 && r.ratio == 0.0, format!("{} {} {}", r.lhs, r.rhs, r.ratio)))
    });
    s.case("stability/predicted_eta_value", || Ok(close(predicted_eta(1.0, 2.0, 2.0)?, 5.0 / 12.0, 1e-15)));
    s.case("stability/predicted_eta_limit", || {
        let v = predicted_eta(2.0 - 1e-9, 2.0, 2.0)?;
        Ok(close(v, 1.0, 1e-8))
    });
}

fn shape() -> SourceShape {
    SourceShape { base: 1.0, amp: 0.5, growth: 0.5, width: 0.5, center: [0.5, 0.0] }
}

fn inversion_cases(s: &mut Suite) {
    s.case("inversion/cutoff_midpoint", || Ok(close(cutoff_chi(0.3, 0.2, 0.4)?, 0.5, 1e-15)));
    s.case("inversion/zero_source_traces", || {
        let mut spec = small("decoupled", 32, 8)?;
        spec.terminal = TerminalSpec::Zero;
        spec.initial = InitialSpec::Gaussian { center: [0.5, 0.0], sigma: 0.3 };
        spec.source = SourceTerm { r: SourceProfile::Zero, shape: shape() };
        let ip = InversionProblem::new(spec.build()?, CutoffParams::default_for(1.0), None)?;
        let sol = ip.solve(&vec![0.0; ip.unknowns()], &inversion_solver_config(), None)?;
        let tr = observe(&ip, &sol).traces;
        let tree = &ip.base.tree;
        let (mut u_max, mut asym) = (0.0f64, 0.0f64);
        for d in 0..=tree.steps() {
            let level = tree.level(d);
            for (j, &id) in level.iter().enumerate() {
                let mirror = level[level.len() - 1 - j];
                for c in [1, 3, 5] {
                    u_max = u_max.max(tr.at(id, 0, c, 0).abs()).max(tr.at(id, 1, c, 0).abs());
                }
                for (c, sign) in [(0, 1.0), (2, -1.0), (4, 1.0)] {
                    let (a, b) = (tr.at(id, 0, c, 0), tr.at(mirror, 1, c, 0));
                    asym = asym.max((a - sign * b).abs() / (1.0 + a.abs()));
                }
            }
        }
        Ok((u_max == 0.0 && asym <= 1e-12, format!("max |u trace| = {u_max:e}, rho asymmetry {asym:e}")))
    });
    let twin = || -> Result<(InversionProblem, Vec<f64>)> {
        let mut spec = small("coupled", 16, 8)?;
        spec.source = SourceTerm { r: SourceProfile::Zero, shape: shape() };
        let ip = InversionProblem::new(spec.build()?, CutoffParams::default_for(1.0), None)?;
        let truth = ip.sample_profile(&SourceProfile::Smooth { amp: 0.5, omega: 2.0 * std::f64::consts::PI });
        Ok((ip, truth))
    };
    s.case("inversion/noise_free_observations_reproducible", || {
        let (ip, truth) = twin()?;
        let cfg = inversion_solver_config();
        let a = observe(&ip, &ip.solve(&truth, &cfg, None)?);
        let b = observe(&ip, &ip.solve(&truth, &cfg, None)?);
        let spec = NoiseSpec { level: 0.0, seed: 9 };
        let c = add_noise(&ip, &a, spec)?;
        let d = add_noise(&ip, &b, spec)?;
        Ok((a == b && c == d, "observations equal".into()))
    });
    s.case("inversion/identical_sources_transformed_residual", || {
        let (ip, truth) = twin()?;
        let sol = ip.solve(&truth, &inversion_solver_config(), None)?;
        let r = verify_theorem3_transformations(&ip, &sol, &sol, TransportScheme::Central)?;
        Ok((r.w_eq == 0.0 && r.p_eq == 0.0, format!("w_eq {:e}, p_eq {:e}", r.w_eq, r.p_eq)))
    });
    s.case("inversion/identical_guesses_certificate", || {
        let (ip, truth) = twin()?;
        let obs = observe(&ip, &ip.solve(&truth, &inversion_solver_config(), None)?);
        let init = vec![0.2; ip.unknowns()];
        let opts = ReconstructOptions { alpha: 1e-3, max_iters: 30, ..ReconstructOptions::default() };
        let c = match uniqueness_certificate(&ip, &obs, &init, &init, opts, Some(&truth)) {
            Ok(c) => c.value,
            // a run stopped by the iteration cap still has to agree with its twin
            Err(Error::Optimization(_)) => {
                let a = crate::inversion::reconstruct_source(&ip, &obs, &init, opts, None)?;
                let b = crate::inversion::reconstruct_source(&ip, &obs, &init, opts, None)?;
                if a.r_hat == b.r_hat {
                    0.0
                } else {
                    1.0
                }
            }
            Err(e) => return Err(e),
        };
        Ok((c == 0.0, format!("{c:e}")))
    });
}

fn runner_cases(s: &mut Suite) {
    s.case("runner/capacity_guard", || {
        let mut spec = ProblemSpec::preset("coupled")?;
        spec.tree = TreeKind::Full;
        spec.steps = 14;
        spec.points = 4096;
        let big = capacity_guard(&spec, super::DEFAULT_MEMORY_LIMIT_MB << 20);
        spec.points = 64;
        let fits = capacity_guard(&spec, super::DEFAULT_MEMORY_LIMIT_MB << 20);
        spec.steps = 15;
        let deep = capacity_guard(&spec, super::DEFAULT_MEMORY_LIMIT_MB << 20);
        let ok = matches!(big, Err(Error::Capacity(_))) && fits.is_ok() && matches!(deep, Err(Error::Capacity(_)));
        Ok((ok, format!("N = 4096: {big:?}; N = 64: {fits:?}")))
    });
    s.case("runner/seed_streams", || {
        let a = super::derive_seed(7, 1);
        Ok((a == super::derive_seed(7, 1) && a != super::derive_seed(7, 2) && a != super::derive_seed(8, 1), format!("{a}")))
    });
}

/// Runs every definitional example.
pub fn selftest_checks() -> Vec<CheckRecord> {
    let mut s = Suite(Vec::new());
    grid_cases(&mut s);
    tree_cases(&mut s);
    model_cases(&mut s);
    solver_cases(&mut s);
    carleman_cases(&mut s);
    stability_cases(&mut s);
    inversion_cases(&mut s);
    runner_cases(&mut s);
    s.0
}

pub(crate) fn run(ctx: &mut RunContext) -> Result<()> {
    ctx.stage("checks");
    let checks = selftest_checks();
    let rows: Vec<Vec<String>> =
        checks.iter().map(|c| vec![c.name.clone(), c.passed.to_string(), format!("\"{}\"", c.detail.replace('"', "'"))]).collect();
    ctx.stage("write");
    ctx.sink.write_csv("selftest.csv", &["check", "passed", "detail"], &rows)?;
    let passed = checks.iter().filter(|c| c.passed).count();
    ctx.note("checks", checks.len());
    ctx.note("passed", passed);
    ctx.checks.extend(checks);
    Ok(())
}
