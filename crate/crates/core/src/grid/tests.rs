use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;
use crate::tree::{build_tree, TreeField};

fn g1(n: usize) -> Grid {
    Grid::new(1, 1.0, n, 1.0, 4).unwrap()
}

fn g2(n: usize) -> Grid {
    Grid::new(2, 1.0, n, 1.0, 4).unwrap()
}

#[test]
fn grid_invariants() {
    let g = Grid::new(2, 0.7, 24, 0.3, 7).unwrap();
    assert_eq!(g.spacing() * g.points() as f64, 2.0 * g.half_width());
    assert_eq!(g.dt() * g.steps() as f64, g.horizon());
    assert!(Grid::new(3, 1.0, 16, 1.0, 2).is_err());
    assert!(Grid::new(1, 1.0, 6, 1.0, 2).is_err());
    assert!(Grid::new(1, 1.0, 9, 1.0, 2).is_err());
}

#[test]
fn gradient_of_constant_vanishes() {
    let f = Field::constant(g2(16), 3.5);
    for d in gradient(&f, Backend::Central) {
        assert_eq!(d.max_abs(), 0.0);
    }
    assert_eq!(laplacian(&f, Backend::Central).max_abs(), 0.0);
}

#[test]
fn gradient_second_order() {
    let err = |n: usize| {
        let g = g1(n);
        let f = Field::from_fn(g, |x| (PI * x[0]).sin());
        let d = partial(&f, 0, Backend::Central);
        let exact = Field::from_fn(g, |x| PI * (PI * x[0]).cos());
        d.sub(&exact).max_abs()
    };
    let ratio = err(64) / err(128);
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn laplacian_second_order() {
    let err = |n: usize| {
        let g = g1(n);
        let f = Field::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        let exact = f.scaled(-(2.0 * PI).powi(2));
        laplacian(&f, Backend::Central).sub(&exact).max_abs()
    };
    let ratio = err(64) / err(128);
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn stencils_of_delta() {
    let g = g1(16);
    let h = g.spacing();
    let j = 5;
    let f = Field::from_fn(g, |x| if g.index_of(x[0]) == Some(j) { 1.0 } else { 0.0 });
    let d = partial(&f, 0, Backend::Central);
    assert_eq!(d.values()[j - 1], 1.0 / (2.0 * h));
    assert_eq!(d.values()[j + 1], -1.0 / (2.0 * h));
    assert_eq!(d.values()[j], 0.0);
    let l = laplacian(&f, Backend::Central);
    let s = 1.0 / (h * h);
    assert_eq!(&l.values()[j - 1..=j + 1], &[s, -2.0 * s, s]);
}

#[test]
fn integrate_examples() {
    let g = Grid::new(2, 1.5, 16, 1.0, 1).unwrap();
    assert!((integrate(&Field::constant(g, 1.0)) - 9.0).abs() < 1e-13);
    let g = Grid::new(1, 10.0, 256, 1.0, 1).unwrap();
    let s: f64 = 0.7;
    let bump = Field::from_fn(g, |x| (-x[0] * x[0] / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt()));
    assert!((integrate(&bump) - 1.0).abs() < 1e-8);
    let odd = Field::from_fn(g, |x| x[0] * (-x[0] * x[0]).exp());
    assert!(integrate(&odd).abs() < 1e-15);
}

#[test]
fn identity_rejects_1d() {
    assert!(matches!(
        mixed_second_identity_check(&Field::zeros(g1(16))),
        Err(crate::Error::Dimension(_))
    ));
    assert_eq!(mixed_second_identity_check(&Field::zeros(g2(16))).unwrap(), (0.0, 0.0));
}

#[test]
fn identity_on_product_of_sines() {
    let f = Field::from_fn(g2(32), |x| (PI * x[0]).sin() * (2.0 * PI * x[1]).sin());
    let (l, r) = mixed_second_identity_check(&f).unwrap();
    assert!(((l - r) / r).abs() < 1e-10);
}

#[test]
fn spectral_derivative_exact_on_modes() {
    let g = g2(32);
    let f = Field::from_fn(g, |x| (3.0 * PI * x[0]).sin() * (PI * x[1]).cos());
    let d = spectral::partial(&f, 0);
    let exact = Field::from_fn(g, |x| 3.0 * PI * (3.0 * PI * x[0]).cos() * (PI * x[1]).cos());
    assert!(d.sub(&exact).max_abs() < 1e-11);
    let lap = spectral::laplacian(&f);
    assert!(lap.add(&f.scaled(10.0 * PI * PI)).max_abs() < 1e-10);
}

#[test]
fn implicit_solve_inverts_operator() {
    let g = g2(16);
    let b = Field::from_fn(g, |x| (-(x[0] * x[0] + 2.0 * x[1] * x[1]) * 4.0).exp() + 0.1 * x[0]);
    let c = 0.013;
    let x = spectral::implicit_diffusion_solve(&b, c);
    let back = x.sub(&laplacian(&x, Backend::Central).scaled(c));
    assert!(back.sub(&b).max_abs() < 1e-12);
    assert!((integrate(&x) - integrate(&b)).abs() < 1e-12);
}

#[test]
fn norms_examples() {
    let tree = build_tree(3, 0.5, false).unwrap();
    let g = Grid::new(1, 2.0, 16, 1.5, 3).unwrap();
    let zero = TreeField::filled(&tree, Field::zeros(g));
    let r = sobolev_norms(&zero, &tree).unwrap();
    assert_eq!(r, NormReport::default());
    let one = TreeField::filled(&tree, Field::constant(g, 1.0));
    let r = sobolev_norms(&one, &tree).unwrap();
    assert!((r.l2_time_l2 - (1.5f64 * 4.0).sqrt()).abs() < 1e-13);
    assert!(r.h1_space >= r.l2_space);
    let a = 0.7;
    let signed = TreeField::from_fn(&tree, |id| {
        let mut n = id;
        while tree.node(n).depth > 1 {
            n = tree.node(n).parent.unwrap();
        }
        let s = if n == 0 { 1.0 } else { tree.node(n).sign as f64 };
        Field::constant(g, s * a)
    });
    let flat = TreeField::filled(&tree, Field::constant(g, a));
    assert!(
        (sobolev_norms(&signed, &tree).unwrap().l2_time_l2
            - sobolev_norms(&flat, &tree).unwrap().l2_time_l2)
            .abs()
            < 1e-13
    );
    let short = TreeField::from_vec(&build_tree(2, 0.5, false).unwrap(), vec![Field::zeros(g); 7]).unwrap();
    assert!(sobolev_norms(&short, &tree).is_err());
}

#[test]
fn snapshot_round_trip() {
    let g = g2(8);
    let f = Field::from_fn(g, |x| x[0] - 2.0 * x[1]);
    let mut buf = Vec::new();
    snapshot::write_snapshot(&mut buf, &f, 0.25, 3).unwrap();
    let (h, back) = snapshot::read_snapshot(&buf[..]).unwrap();
    assert_eq!((h.n, h.points, h.node_id, h.time), (2, 8, 3, 0.25));
    assert_eq!(back.values(), f.values());
    assert!(snapshot::read_snapshot(&buf[..buf.len() - 1]).is_err());
}

fn band_limited(grid: Grid, coeffs: &[f64]) -> Field {
    Field::from_fn(grid, |x| {
        let mut s = 0.0;
        let mut c = coeffs.iter();
        for a in 1..=3 {
            for b in 0..=2 {
                let (p, q) = (*c.next().unwrap(), *c.next().unwrap());
                let arg = PI * (a as f64 * x[0] + b as f64 * x[1]);
                s += p * arg.sin() + q * arg.cos();
            }
        }
        s
    })
}

proptest! {
    #[test]
    fn identity_holds_for_band_limited(coeffs in prop::collection::vec(-1.0f64..1.0, 18)) {
        let f = band_limited(g2(16), &coeffs);
        let (l, r) = mixed_second_identity_check(&f).unwrap();
        prop_assert!((l - r).abs() <= 1e-10 * r.max(1e-300));
    }

    #[test]
    fn identity_holds_for_any_field(vals in prop::collection::vec(-1.0f64..1.0, 64)) {
        let f = Field::from_values(g2(8), vals).unwrap();
        let (l, r) = mixed_second_identity_check(&f).unwrap();
        prop_assert!((l - r).abs() <= 1e-10 * r.max(1e-300));
    }

    #[test]
    fn operators_are_linear(a in -3.0f64..3.0, b in -3.0f64..3.0,
                            u in prop::collection::vec(-1.0f64..1.0, 64),
                            v in prop::collection::vec(-1.0f64..1.0, 64)) {
        let g = g2(8);
        let (f, h) = (Field::from_values(g, u).unwrap(), Field::from_values(g, v).unwrap());
        let comb = Field::lincomb(&f, a, &h, b);
        for backend in [Backend::Central, Backend::Spectral] {
            let lhs = laplacian(&comb, backend);
            let rhs = Field::lincomb(&laplacian(&f, backend), a, &laplacian(&h, backend), b);
            prop_assert!(lhs.sub(&rhs).max_abs() < 1e-10 * (1.0 + lhs.max_abs()));
            for ax in 0..2 {
                let lhs = partial(&comb, ax, backend);
                let rhs = Field::lincomb(&partial(&f, ax, backend), a, &partial(&h, ax, backend), b);
                prop_assert!(lhs.sub(&rhs).max_abs() < 1e-10 * (1.0 + lhs.max_abs()));
            }
        }
    }

    #[test]
    fn summation_by_parts(u in prop::collection::vec(-1.0f64..1.0, 64),
                          v0 in prop::collection::vec(-1.0f64..1.0, 64),
                          v1 in prop::collection::vec(-1.0f64..1.0, 64)) {
        let g = g2(8);
        let f = Field::from_values(g, u).unwrap();
        let vec = vec![Field::from_values(g, v0).unwrap(), Field::from_values(g, v1).unwrap()];
        for backend in [Backend::Central, Backend::Spectral] {
            let lhs = inner(&f, &divergence(&vec, backend));
            let grad = gradient(&f, backend);
            let rhs: f64 = -grad.iter().zip(&vec).map(|(a, b)| inner(a, b)).sum::<f64>();
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()) * 10.0);
        }
    }

    #[test]
    fn implicit_solve_conserves_mass(vals in prop::collection::vec(-1.0f64..1.0, 16), c in 0.0f64..1.0) {
        let f = Field::from_values(g1(16), vals).unwrap();
        let x = spectral::implicit_diffusion_solve(&f, c);
        prop_assert!((integrate(&x) - integrate(&f)).abs() < 1e-12);
    }
}
