use super::*;
use crate::error::Error;
use crate::grid::{Field, Grid};
use crate::tree::{build_tree, ScenarioTree, TreeField, TreeKind};

fn backward(seed: u64, beta: f64, odd: bool) -> SyntheticDatum {
    let grid = Grid::new(1, 1.0, 32, 1.0, 16).unwrap();
    let tree = build_tree(16, grid.dt(), true).unwrap();
    let spec = SyntheticSpec { seed, odd_in_x1: odd, ..Default::default() };
    SyntheticDatum::Backward(make_backward(&spec, grid, &tree, beta, None).unwrap())
}

fn scaled(d: &SyntheticDatum, c: f64) -> SyntheticDatum {
    let s = |f: &TreeField<Field>| f.map(|x| x.scaled(c));
    match d {
        SyntheticDatum::Backward(b) => SyntheticDatum::Backward(BackwardDatum {
            w: s(&b.w),
            f1: s(&b.f1),
            f2: s(&b.f2),
            ..b.clone()
        }),
        SyntheticDatum::Forward(f) => {
            SyntheticDatum::Forward(ForwardDatum { p: s(&f.p), g1: s(&f.g1), ..f.clone() })
        }
    }
}

#[test]
fn zero_datum_gives_zero_report() {
    let grid = Grid::new(1, 1.0, 32, 1.0, 8).unwrap();
    let tree = build_tree(8, grid.dt(), true).unwrap();
    let spec = SyntheticSpec { amplitude: 0.0, odd_in_x1: true, ..Default::default() };
    let d = SyntheticDatum::Backward(make_backward(&spec, grid, &tree, 0.5, None).unwrap());
    let w = CarlemanWeight::new(1.0, 2.0, 1.0).unwrap();
    for r in [check_th1(&d, &w, CheckOptions::default()).unwrap(), check_th3(&d, &w, TimeRule::default()).unwrap()] {
        assert_eq!(r.lhs_total, 0.0);
        assert_eq!(r.rhs_total, 0.0);
        assert_eq!(r.margin, 0.0);
        assert_eq!(r.relative_margin, 0.0);
    }
    let full = build_tree(8, grid.dt(), false).unwrap();
    let f = SyntheticDatum::Forward(make_forward(&spec, grid, &full, 0.5, ForwardScheme::Implicit).unwrap());
    let w = CarlemanWeight::new(1e-3, mu_min(1.0), 1.0).unwrap();
    let r = check_th2(&f, &w, CheckOptions::default()).unwrap();
    assert_eq!(r.lhs_total, 0.0);
    assert_eq!(r.rhs_total, 0.0);
}

#[test]
fn div_term_vanishes_for_unit_beta() {
    let d = backward(3, 1.0, false);
    let w = CarlemanWeight::new(2.0, 4.0, 1.0).unwrap();
    let r = check_th1(&d, &w, CheckOptions::default()).unwrap();
    assert_eq!(r.term("div_f2").unwrap().value, 0.0);
    assert!(r.term("f2").unwrap().value > 0.0);
}

#[test]
fn scaling_is_quadratic() {
    let d = backward(5, 0.5, false);
    let w = CarlemanWeight::new(1.0, 2.0, 1.0).unwrap();
    let c = 3.5;
    let a = check_th1(&d, &w, CheckOptions::default()).unwrap();
    let b = check_th1(&scaled(&d, c), &w, CheckOptions::default()).unwrap();
    for (x, y) in a.lhs_terms.iter().chain(&a.rhs_terms).zip(b.lhs_terms.iter().chain(&b.rhs_terms)) {
        assert!((y.value - c * c * x.value).abs() <= 1e-12 * y.value.abs(), "{}", x.name);
    }
    assert_eq!(a.margin.signum(), b.margin.signum());
}

#[test]
fn bounded_backward_matches_restricted_whole_space() {
    let w = CarlemanWeight::new(2.0, 2.0, 1.0).unwrap();
    for seed in 0..4 {
        let d = backward(seed, 0.5, true);
        let g = check_th1(&d, &w, CheckOptions { domain: Domain::Slab, ..Default::default() }).unwrap();
        let b = check_th3(&d, &w, TimeRule::default()).unwrap();
        for (x, y) in g.lhs_terms.iter().chain(&g.rhs_terms).zip(b.lhs_terms.iter().chain(&b.rhs_terms)) {
            let factor = match x.name.as_str() {
                "f2" => 0.5,
                "f1" => 2.0,
                _ => 1.0,
            };
            assert!((y.value - factor * x.value).abs() <= 1e-10 * y.value.abs().max(1e-300), "{}", x.name);
        }
    }
}

#[test]
fn slab_integral_is_half_the_box_for_odd_data() {
    let w = CarlemanWeight::new(1.0, 2.0, 1.0).unwrap();
    let d = backward(2, 0.3, true);
    let g = check_th1(&d, &w, CheckOptions { domain: Domain::Slab, ..Default::default() }).unwrap();
    let b = check_th1(&d, &w, CheckOptions::default()).unwrap();
    for (x, y) in g.lhs_terms.iter().zip(&b.lhs_terms) {
        assert!((2.0 * x.value - y.value).abs() <= 1e-10 * y.value, "{}", x.name);
    }
}

#[test]
fn boundary_trace_is_rejected() {
    let d = backward(1, 0.5, false);
    let w = CarlemanWeight::new(1.0, 2.0, 1.0).unwrap();
    assert!(matches!(check_th3(&d, &w, TimeRule::default()), Err(Error::Precondition(_))));
}

#[test]
fn kind_mismatch_is_rejected() {
    let d = backward(1, 0.5, false);
    let w = CarlemanWeight::new(1.0, mu_min(1.0), 1.0).unwrap();
    assert!(check_th2(&d, &w, CheckOptions::default()).is_err());
    assert!(check_th4(&d, &w, TimeRule::default()).is_err());
}

#[test]
fn mu_below_minimum_reports_bound() {
    let grid = Grid::new(1, 1.0, 16, 1.0, 4).unwrap();
    let tree = build_tree(4, grid.dt(), false).unwrap();
    let f = SyntheticDatum::Forward(
        make_forward(&SyntheticSpec::default(), grid, &tree, 0.5, ForwardScheme::Implicit).unwrap(),
    );
    let w = CarlemanWeight::new(1.0, 100.0, 1.0).unwrap();
    match check_th2(&f, &w, CheckOptions::default()) {
        Err(Error::MuBelowMinimum { required, .. }) => assert_eq!(required, 1296.0),
        other => panic!("{other:?}"),
    }
}

#[test]
fn minimal_admissible_mu_stays_finite() {
    let grid = Grid::new(1, 1.0, 32, 1.0, 12).unwrap();
    let tree = build_tree(12, grid.dt(), false).unwrap();
    let f = SyntheticDatum::Forward(
        make_forward(&SyntheticSpec::default(), grid, &tree, 0.5, ForwardScheme::Implicit).unwrap(),
    );
    let mut e = -300.0;
    while e <= 0.0 {
        let w = CarlemanWeight::new(10f64.powf(e), mu_min(1.0), 1.0).unwrap();
        let r = check_th2(&f, &w, CheckOptions::default()).unwrap();
        assert!(r.lhs_log.is_finite() && r.rhs_log.is_finite(), "lambda = 1e{e}");
        assert!(r.relative_margin.is_finite());
        assert!(r.lhs_terms.iter().chain(&r.rhs_terms).all(|t| t.value.is_finite() && !t.log_value.is_nan()));
        e += 25.0;
    }
}

#[test]
fn heat_solution_satisfies_forward_estimate() {
    let grid = Grid::new(1, 1.0, 128, 1.0, 64).unwrap();
    let tree = ScenarioTree::new(64, grid.dt(), TreeKind::Degenerate).unwrap();
    let spec = SyntheticSpec { forcing: 0.0, ..Default::default() };
    let d = SyntheticDatum::Forward(make_forward(&spec, grid, &tree, 0.0, ForwardScheme::Implicit).unwrap());
    let w = CarlemanWeight::new(1e-3, mu_min(1.0), 1.0).unwrap();
    let r = check_th2(&d, &w, CheckOptions::default()).unwrap();
    assert!(r.margin >= 0.0, "{r:?}");
}

#[test]
fn csv_row_matches_header() {
    let d = backward(0, 0.5, false);
    let w = CarlemanWeight::new(1.0, 2.0, 1.0).unwrap();
    let r = check_th1(&d, &w, CheckOptions::default()).unwrap();
    let h = InequalityReport::csv_header(Theorem::Th1);
    assert_eq!(h.split(',').count(), r.csv_row().split(',').count());
}

#[test]
fn doubling_search_returns_first_passing_pair() {
    let data: Vec<SyntheticDatum> = (0..3).map(|s| backward(s, 0.5, false)).collect();
    let cert = doubling_search(data.len(), SearchBounds::default(), |l, m, i| {
        check_th1(&data[i], &CarlemanWeight::new(l, m, 1.0)?, CheckOptions::default())
    })
    .unwrap();
    let last = cert.steps.last().unwrap();
    assert_eq!(last.passed, last.total);
    assert_eq!((cert.lambda0, cert.mu0), (last.lambda, last.mu));
    assert!(cert.steps[..cert.steps.len() - 1].iter().all(|s| s.passed < s.total));
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
    #[test]
    fn scaling_keeps_margin_sign(seed in 0u64..1000, c in 0.1f64..10.0) {
        let d = backward(seed, 0.5, false);
        let w = CarlemanWeight::new(1.0, 2.0, 1.0).unwrap();
        let a = check_th1(&d, &w, CheckOptions::default()).unwrap();
        let b = check_th1(&scaled(&d, c), &w, CheckOptions::default()).unwrap();
        proptest::prop_assert_eq!(a.margin >= 0.0, b.margin >= 0.0);
        proptest::prop_assert!((b.lhs_log - a.lhs_log - 2.0 * c.ln()).abs() < 1e-10);
    }
}
