//! Conservative discretizations of `div(rho a)`.

use serde::{Deserialize, Serialize};

use crate::grid::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportScheme {
    #[default]
    Upwind,
    Central,
}

#[inline]
pub(crate) fn next(n: usize, dim: usize, p: usize, axis: usize) -> usize {
    if dim == 1 {
        (p + 1) % n
    } else if axis == 0 {
        ((p / n + 1) % n) * n + p % n
    } else {
        (p / n) * n + (p % n + 1) % n
    }
}

/// Face flux of `rho v` between node `p` and its successor along `axis`.
#[inline]
pub(crate) fn face_flux(scheme: TransportScheme, vp: f64, vq: f64, rp: f64, rq: f64) -> f64 {
    let vf = 0.5 * (vp + vq);
    match scheme {
        TransportScheme::Upwind => vf.max(0.0) * rp + vf.min(0.0) * rq,
        TransportScheme::Central => 0.5 * vf * (rp + rq),
    }
}

/// `div(rho a)` as a flux difference with transport velocity `v = -a`, so the
/// result always sums to zero over the periodic box.
pub fn flux_divergence(rho: &Field, a: &[Field], scheme: TransportScheme) -> Field {
    let g = *rho.grid();
    let (n, dim, h) = (g.points(), g.dim(), g.spacing());
    let r = rho.values();
    let mut out = vec![0.0; g.len()];
    for (axis, a_axis) in a.iter().enumerate().take(dim) {
        let av = a_axis.values();
        for p in 0..g.len() {
            let q = next(n, dim, p, axis);
            let f = face_flux(scheme, -av[p], -av[q], r[p], r[q]) / h;
            out[p] -= f;
            out[q] += f;
        }
    }
    Field::from_raw(g, out)
}

/// Transpose of the linearization of [`flux_divergence`] applied to the
/// cotangent `bar`: returns `(rho_bar, a_bar)`. The upwind branch uses the
/// one-sided derivative selected by the sign of the face velocity.
pub fn flux_divergence_vjp(rho: &Field, a: &[Field], scheme: TransportScheme, bar: &Field) -> (Field, Vec<Field>) {
    let g = *rho.grid();
    let (n, dim, h) = (g.points(), g.dim(), g.spacing());
    let r = rho.values();
    let b = bar.values();
    let mut rb = vec![0.0; g.len()];
    let mut ab = Vec::with_capacity(dim);
    for (axis, a_axis) in a.iter().enumerate().take(dim) {
        let av = a_axis.values();
        let mut out = vec![0.0; g.len()];
        for p in 0..g.len() {
            let q = next(n, dim, p, axis);
            let fb = (b[q] - b[p]) / h;
            let vf = -0.5 * (av[p] + av[q]);
            let (drp, drq, dvf) = match scheme {
                TransportScheme::Upwind => {
                    let up = if vf > 0.0 { r[p] } else { r[q] };
                    (vf.max(0.0), vf.min(0.0), up)
                }
                TransportScheme::Central => (0.5 * vf, 0.5 * vf, 0.5 * (r[p] + r[q])),
            };
            rb[p] += fb * drp;
            rb[q] += fb * drq;
            out[p] -= 0.5 * fb * dvf;
            out[q] -= 0.5 * fb * dvf;
        }
        ab.push(Field::from_raw(g, out));
    }
    (Field::from_raw(g, rb), ab)
}

/// Largest Courant number `dt sum_axis max|a| / h`.
pub fn courant_number(a: &[Field], dt: f64) -> f64 {
    let h = a[0].grid().spacing();
    a.iter().map(|c| c.max_abs()).sum::<f64>() * dt / h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, Grid};

    #[test]
    fn flux_form_conserves_mass() {
        let g = Grid::new(2, 1.0, 16, 1.0, 1).unwrap();
        let rho = Field::from_fn(g, |x| 1.0 + 0.5 * (x[0] * 3.0).sin() * x[1].cos());
        let a = vec![Field::from_fn(g, |x| x[1].sin()), Field::from_fn(g, |x| 0.3 + x[0])];
        for s in [TransportScheme::Upwind, TransportScheme::Central] {
            assert!(integrate(&flux_divergence(&rho, &a, s)).abs() < 1e-13);
        }
    }

    #[test]
    fn central_flux_is_second_order() {
        let err = |n: usize| {
            let g = Grid::new(1, 1.0, n, 1.0, 1).unwrap();
            let pi = std::f64::consts::PI;
            let rho = Field::from_fn(g, |x| 1.0 + 0.5 * (pi * x[0]).sin());
            let a = vec![Field::from_fn(g, |x| (pi * x[0]).cos())];
            let exact = Field::from_fn(g, |x| {
                let (s, c) = ((pi * x[0]).sin(), (pi * x[0]).cos());
                0.5 * pi * c * c - pi * s * (1.0 + 0.5 * s)
            });
            flux_divergence(&rho, &a, TransportScheme::Central).sub(&exact).max_abs()
        };
        let r = err(64) / err(128);
        assert!((3.5..4.5).contains(&r), "{r}");
    }

    #[test]
    fn vjp_is_the_transpose() {
        let g = Grid::new(2, 1.0, 8, 1.0, 1).unwrap();
        let rho = Field::from_fn(g, |x| 1.0 + 0.4 * (x[0] * 2.0).sin() * x[1].cos());
        let a = vec![Field::from_fn(g, |x| 0.7 * x[1].sin() - 0.2), Field::from_fn(g, |x| 0.3 + 0.5 * x[0])];
        let bar = Field::from_fn(g, |x| (x[0] + 2.0 * x[1]).cos());
        let dr = Field::from_fn(g, |x| (3.0 * x[0] - x[1]).sin());
        let da = vec![Field::from_fn(g, |x| x[0] * x[1]), Field::from_fn(g, |x| (x[1] * 4.0).cos())];
        for s in [TransportScheme::Upwind, TransportScheme::Central] {
            let (rb, ab) = flux_divergence_vjp(&rho, &a, s, &bar);
            let e = 1e-6;
            let shift = |c: f64| {
                let r = Field::lincomb(&rho, 1.0, &dr, c);
                let aa: Vec<Field> = a.iter().zip(&da).map(|(x, y)| Field::lincomb(x, 1.0, y, c)).collect();
                crate::grid::inner(&flux_divergence(&r, &aa, s), &bar)
            };
            let fd = (shift(e) - shift(-e)) / (2.0 * e);
            let exact = crate::grid::inner(&rb, &dr) + crate::grid::inner(&ab[0], &da[0]) + crate::grid::inner(&ab[1], &da[1]);
            assert!((fd - exact).abs() < 1e-7 * (1.0 + exact.abs()), "{s:?}: {fd} vs {exact}");
        }
    }
}
