use super::*;
use crate::model::{InitialSpec, ProblemSpec, SourceShape, TerminalSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn shape() -> SourceShape {
    SourceShape { base: 1.0, amp: 0.5, growth: 0.5, width: 0.5, center: [0.5, 0.0] }
}

pub(crate) fn twin(points: usize, steps: usize) -> (InversionProblem, Vec<f64>) {
    let mut spec = ProblemSpec::preset("coupled").unwrap().with_resolution(points, steps);
    spec.source = SourceTerm { r: SourceProfile::Zero, shape: shape() };
    let base = spec.build().unwrap();
    let ip = InversionProblem::new(base, CutoffParams::default_for(1.0), None).unwrap();
    let truth: Vec<f64> = (0..steps)
        .map(|k| {
            let t = (k as f64 + 0.5) / steps as f64;
            0.5 + 0.5 * (2.0 * std::f64::consts::PI * t).sin()
        })
        .collect();
    (ip, truth)
}

#[test]
fn adjoint_gradient_matches_central_differences() {
    let (ip, truth) = twin(32, 16);
    let sol = ip.solve(&truth, &inversion_solver_config(), None).unwrap();
    let obs = observe(&ip, &sol);
    let opts = ReconstructOptions { alpha: 1e-3, ..Default::default() };
    let obj = reconstruct::Objective::new(&ip, &obs, opts);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let r0: Vec<f64> = truth.iter().map(|v| v + 0.3 * (rng.random::<f64>() - 0.5)).collect();
    let (_, g) = obj.evaluate(&r0).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let d: Vec<f64> = (0..r0.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        let d: Vec<f64> = d.iter().map(|x| x / n).collect();
        let eps = 1e-4;
        let at = |s: f64| {
            let r: Vec<f64> = r0.iter().zip(&d).map(|(a, b)| a + s * b).collect();
            obj.evaluate(&r).unwrap().0.total
        };
        let fd = (at(eps) - at(-eps)) / (2.0 * eps);
        let ad: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-300);
        eprintln!("fd {fd:.10e} ad {ad:.10e} rel {rel:.3e}");
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-5, "worst relative gradient error {worst:.3e}");
}

fn twin_obs(points: usize, steps: usize) -> (InversionProblem, Vec<f64>, Observations) {
    let (ip, truth) = twin(points, steps);
    let sol = ip.solve(&truth, &inversion_solver_config(), None).unwrap();
    let obs = observe(&ip, &sol);
    (ip, truth, obs)
}

fn norm(ip: &InversionProblem, r: &[f64]) -> f64 {
    ip.source_norm_sq(r).sqrt()
}

#[test]
fn cutoff_examples() {
    let c = CutoffParams::default_for(1.0);
    assert_eq!(c.chi(0.0), 0.0);
    assert_eq!(c.chi(c.t1), 0.0);
    assert_eq!(c.chi(c.t2), 1.0);
    assert_eq!(c.chi(0.9), 1.0);
    assert!((c.chi(0.5 * (c.t1 + c.t2)) - 0.5).abs() < 1e-15);
    let peak = c.chi_t(0.5 * (c.t1 + c.t2));
    assert!((peak - 1.875 / (c.t2 - c.t1)).abs() < 1e-12);
    let sup = (0..=1000).map(|i| c.chi_t(c.t1 + (c.t2 - c.t1) * i as f64 / 1000.0)).fold(0.0, f64::max);
    assert!((sup - peak).abs() < 1e-12);
    assert_eq!(c.chi_t(c.t1 - 1e-3), 0.0);
    assert_eq!(c.chi_t(c.t2 + 1e-3), 0.0);
    assert!(cutoff_chi(0.1, 0.2, 0.2).is_err());
    assert!(cutoff_chi_t(0.1, 0.3, 0.2).is_err());
    assert!((cutoff_chi(0.25, 0.2, 0.3).unwrap() - 0.5).abs() < 1e-15);
    assert!(CutoffParams { epsilon: 0.2, t1: 0.1, t2: 0.3 }.validate(1.0).is_err());
    assert!(CutoffParams::from_epsilon(1.5).validate(1.0).is_err());
}

proptest! {
    #[test]
    fn cutoff_is_a_monotone_ramp(t1 in 0.01f64..0.5, w in 0.01f64..0.5, a in -0.2f64..1.2, b in -0.2f64..1.2) {
        let t2 = t1 + w;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (x, y) = (cutoff_chi(lo, t1, t2).unwrap(), cutoff_chi(hi, t1, t2).unwrap());
        prop_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
        prop_assert!(x <= y);
        let d = cutoff_chi_t(lo, t1, t2).unwrap();
        prop_assert!(d >= 0.0 && d <= 1.875 / w + 1e-12);
    }

    #[test]
    fn chi_t_is_the_derivative(s in 0.05f64..0.95) {
        let c = CutoffParams::default_for(1.0);
        let t = c.t1 + s * (c.t2 - c.t1);
        let e = 1e-6;
        let fd = (c.chi(t + e) - c.chi(t - e)) / (2.0 * e);
        prop_assert!((fd - c.chi_t(t)).abs() <= 1e-6 * (1.0 + fd.abs()));
    }
}

#[test]
fn zero_source_traces_are_mirror_symmetric() {
    let mut spec = ProblemSpec::preset("decoupled").unwrap().with_resolution(32, 8);
    spec.terminal = TerminalSpec::Zero;
    spec.initial = InitialSpec::Gaussian { center: [0.5, 0.0], sigma: 0.3 };
    spec.source = SourceTerm { r: SourceProfile::Zero, shape: shape() };
    let base = spec.build().unwrap();
    let ip = InversionProblem::new(base, CutoffParams::default_for(1.0), None).unwrap();
    let r = vec![0.0; ip.unknowns()];
    let sol = ip.solve(&r, &inversion_solver_config(), None).unwrap();
    let obs = observe(&ip, &sol);
    let tree = &ip.base.tree;
    let tr = &obs.traces;
    for d in 0..=tree.steps() {
        let level = tree.level(d);
        for (j, &id) in level.iter().enumerate() {
            let mirror = level[level.len() - 1 - j];
            for c in 0..6 {
                let (is_rho, order) = super::observe::component(c);
                let (a, b) = (tr.at(id, 0, c, 0), tr.at(mirror, 1, c, 0));
                if is_rho {
                    let sign = if order == 1 { -1.0 } else { 1.0 };
                    assert!((a - sign * b).abs() <= 1e-12 * (1.0 + a.abs()), "depth {d} node {j} {}: {a} vs {b}", TRACE_NAMES[c]);
                } else {
                    assert_eq!(a, 0.0);
                    assert_eq!(b, 0.0);
                }
            }
        }
    }
    let means = tr.depth_mean(tree, 0);
    assert_eq!(means.len(), 2);
    assert_eq!(means[0].len(), tree.steps() + 1);
    assert_eq!(means[0][0].len(), tr.transverse);
}

#[test]
fn noise_is_seeded_and_sized() {
    let (ip, _, obs) = twin_obs(32, 16);
    let clean = add_noise(&ip, &obs, NoiseSpec { level: 0.0, seed: 3 }).unwrap();
    assert_eq!(clean.terminal, obs.terminal);
    assert_eq!(clean.traces, obs.traces);
    let a = add_noise(&ip, &obs, NoiseSpec { level: 0.01, seed: 3 }).unwrap();
    let b = add_noise(&ip, &obs, NoiseSpec { level: 0.01, seed: 3 }).unwrap();
    let c = add_noise(&ip, &obs, NoiseSpec { level: 0.01, seed: 4 }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.traces, c.traces);
    assert!((a.snr_db - 40.0).abs() < 0.5, "snr {}", a.snr_db);
    assert!(add_noise(&ip, &obs, NoiseSpec { level: -1.0, seed: 0 }).is_err());
}

#[test]
fn vanishing_source_reconstructs_to_the_floor() {
    let (ip, _) = twin(32, 16);
    let zero = vec![0.0; ip.unknowns()];
    let sol = ip.solve(&zero, &inversion_solver_config(), None).unwrap();
    let obs = observe(&ip, &sol);
    let alpha = 1e-4;
    let init = reconstruct::random_guess(&ip, 0.5, 11);
    let res = reconstruct_source(&ip, &obs, &init, ReconstructOptions { alpha, ..Default::default() }, None).unwrap();
    assert!(res.converged, "{}", res.termination);
    assert!(norm(&ip, &res.r_hat) <= 10.0 * alpha.sqrt(), "norm {}", norm(&ip, &res.r_hat));
}

#[test]
fn consistent_data_drive_the_misfit_to_zero() {
    let (ip, truth, obs) = twin_obs(32, 16);
    let opts = ReconstructOptions { alpha: 1e-12, ..Default::default() };
    let res = reconstruct_source(&ip, &obs, &vec![0.0; ip.unknowns()], opts, Some(&truth)).unwrap();
    assert!(res.converged, "{}", res.termination);
    assert!(res.relative_misfit <= 1e-6, "relative misfit {:.3e}", res.relative_misfit);
    for pair in res.history.windows(2) {
        assert!(pair[1].misfit <= pair[0].misfit, "misfit rose at iteration {}", pair[1].iter);
    }
    assert!(res.history.iter().all(|r| r.rel_error.is_some()));
}

#[test]
fn identical_starts_certify_zero() {
    let (ip, truth, obs) = twin_obs(32, 16);
    let opts = ReconstructOptions { alpha: 1e-6, max_iters: 20, ..Default::default() };
    let init = reconstruct::random_guess(&ip, 0.5, 5);
    let first = reconstruct_source(&ip, &obs, &init, opts, Some(&truth)).unwrap();
    let second = reconstruct_source(&ip, &obs, &init, opts, Some(&truth)).unwrap();
    assert_eq!(first.r_hat, second.r_hat);
    assert_eq!(first.history, second.history);
}

#[test]
fn noisy_certificate_degrades_gracefully() {
    let (ip, truth, obs) = twin_obs(32, 16);
    let noisy = add_noise(&ip, &obs, NoiseSpec { level: 0.01, seed: 2 }).unwrap();
    let opts = ReconstructOptions { alpha: 1e-3, ..Default::default() };
    let zero = vec![0.0; ip.unknowns()];
    let init = reconstruct::random_guess(&ip, 1.0, 9);
    let cert = uniqueness_certificate(&ip, &noisy, &zero, &init, opts, Some(&truth)).unwrap();
    assert!(cert.value <= 1e-1, "certificate {:.3e}", cert.value);
    assert!(cert.interior_value.is_finite());
}

#[test]
fn unregularized_noisy_fit_warns() {
    let (ip, _, obs) = twin_obs(32, 16);
    let noisy = add_noise(&ip, &obs, NoiseSpec { level: 0.01, seed: 2 }).unwrap();
    let opts = ReconstructOptions { alpha: 0.0, max_iters: 2, ..Default::default() };
    let res = reconstruct_source(&ip, &noisy, &vec![0.0; ip.unknowns()], opts, None).unwrap();
    assert!(res.warnings.iter().any(|w| w.contains("alpha = 0")));
    assert!(reconstruct_source(&ip, &noisy, &[0.0], opts, None).is_err());
    assert!(reconstruct_source(&ip, &noisy, &vec![0.0; ip.unknowns()], ReconstructOptions { alpha: -1.0, ..opts }, None).is_err());
}

#[test]
fn vanishing_shape_is_rejected() {
    let mut spec = ProblemSpec::preset("coupled").unwrap().with_resolution(32, 8);
    spec.source = SourceTerm { r: SourceProfile::Zero, shape: SourceShape { base: -0.45, amp: 0.5, growth: 0.0, width: 0.5, center: [0.5, 0.0] } };
    let base = spec.build().unwrap();
    assert!(matches!(InversionProblem::new(base, CutoffParams::default_for(1.0), None), Err(Error::Precondition(_))));
}

#[test]
fn regularization_gradient_matches_differences_in_two_dimensions() {
    let mut spec = ProblemSpec::preset("decoupled").unwrap().with_resolution(16, 4);
    spec.dim = 2;
    spec.source = SourceTerm { r: SourceProfile::Zero, shape: shape() };
    let ip = InversionProblem::new(spec.build().unwrap(), CutoffParams::default_for(1.0), None).unwrap();
    assert_eq!(ip.transverse(), 16);
    let r = reconstruct::random_guess(&ip, 1.0, 1);
    let g = ip.source_norm_sq_grad(&r);
    for a in [0, 17, 40, 63] {
        let e = 1e-6;
        let mut p = r.clone();
        p[a] += e;
        let mut m = r.clone();
        m[a] -= e;
        let fd = (ip.source_norm_sq(&p) - ip.source_norm_sq(&m)) / (2.0 * e);
        assert!((fd - g[a]).abs() <= 1e-6 * (1.0 + fd.abs()));
    }
}

#[test]
fn discrepancy_picks_the_largest_admissible_alpha() {
    let (ip, truth, obs) = twin_obs(32, 16);
    let noisy = add_noise(&ip, &obs, NoiseSpec { level: 0.01, seed: 2 }).unwrap();
    let choice = discrepancy_alpha(&ip, &noisy, &[1e-3, 1e0, 1e-1, 1e-2], 1.1, ReconstructOptions::default(), Some(&truth)).unwrap();
    let alphas: Vec<f64> = choice.candidates.iter().map(|c| c.0).collect();
    assert!(alphas.windows(2).all(|w| w[0] > w[1]));
    let (last_alpha, last_misfit) = *choice.candidates.last().unwrap();
    assert_eq!(choice.alpha, last_alpha);
    let admissible = last_misfit <= choice.target;
    assert!(admissible || last_alpha == 1e-3);
    for &(_, m) in &choice.candidates[..choice.candidates.len() - 1] {
        assert!(m > choice.target);
    }
}

#[test]
fn identical_pair_has_zero_transformed_residual() {
    let (ip, truth) = twin(32, 16);
    let cfg = inversion_solver_config();
    let s = ip.solve(&truth, &cfg, None).unwrap();
    let rep = verify_theorem3_transformations(&ip, &s, &s, cfg.transport_scheme).unwrap();
    assert_eq!(rep.w_eq, 0.0);
    assert_eq!(rep.p_eq, 0.0);
    assert_eq!(rep.poincare_worst(), 0.0);
}

fn transformed_pair(points: usize, steps: usize) -> TransformationReport {
    let (ip, truth) = twin(points, steps);
    let cfg = inversion_solver_config();
    let s1 = ip.solve(&truth, &cfg, None).unwrap();
    let r2: Vec<f64> = truth.iter().map(|v| 0.5 * v + 0.2).collect();
    let s2 = ip.solve(&r2, &cfg, None).unwrap();
    verify_theorem3_transformations(&ip, &s1, &s2, cfg.transport_scheme).unwrap()
}

#[test]
fn transformed_residuals_vanish_under_refinement() {
    // the truncation error is O(dt + h^2); dt is refined with h^2
    let coarse = transformed_pair(64, 32);
    let fine = transformed_pair(128, 128);
    let order_w_eq = (coarse.w_eq / fine.w_eq).log2();
    let order_p_eq = (coarse.p_eq / fine.p_eq).log2();
    assert!(order_w_eq >= 1.0, "order {order_w_eq:.3}");
    assert!(order_p_eq >= 1.0, "order {order_p_eq:.3}");
    // the alt_signs coefficient signs leave an O(1) defect
    assert!(fine.w_eq_alt_signs > 10.0 * fine.w_eq);
    assert!((fine.w_eq_alt_signs / coarse.w_eq_alt_signs - 1.0).abs() < 0.2);
    for c in &fine.poincare {
        assert!(c.worst_ratio <= 1.0, "{} ratio {}", c.field, c.worst_ratio);
    }
}

#[test]
fn poincare_bound_holds_on_random_fields() {
    let rep = poincare_random_check(50, 21).unwrap();
    assert_eq!(rep.cases, 50);
    assert!(rep.holds);
    assert!(rep.worst_ratio <= rep.sharp_constant * (1.0 + 1e-3), "{} vs {}", rep.worst_ratio, rep.sharp_constant);
    assert!(poincare_random_check(0, 1).is_err());
}
