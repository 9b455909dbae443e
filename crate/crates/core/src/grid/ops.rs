use serde::{Deserialize, Serialize};

use super::{spectral, Field};
use crate::error::{Error, Result};
use crate::numerics::NeumaierSum;

/// Derivative discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Second-order central periodic stencils.
    #[default]
    Central,
    /// Discrete-Fourier derivatives.
    Spectral,
}

#[inline]
fn shifted(n: usize, dim: usize, flat: usize, axis: usize, plus: bool) -> usize {
    if dim == 1 {
        return if plus { (flat + 1) % n } else { (flat + n - 1) % n };
    }
    let (i, j) = (flat / n, flat % n);
    let step = |x: usize| if plus { (x + 1) % n } else { (x + n - 1) % n };
    if axis == 0 {
        step(i) * n + j
    } else {
        i * n + step(j)
    }
}

fn central_partial(f: &Field, axis: usize) -> Field {
    let g = f.grid();
    let (n, dim) = (g.points(), g.dim());
    let inv = 0.5 / g.spacing();
    let v = f.values();
    let out = (0..v.len())
        .map(|p| (v[shifted(n, dim, p, axis, true)] - v[shifted(n, dim, p, axis, false)]) * inv)
        .collect();
    Field::from_raw(*g, out)
}

fn central_pure_second(f: &Field, axis: usize) -> Field {
    let g = f.grid();
    let (n, dim) = (g.points(), g.dim());
    let inv = 1.0 / (g.spacing() * g.spacing());
    let v = f.values();
    let out = (0..v.len())
        .map(|p| {
            (v[shifted(n, dim, p, axis, true)] - 2.0 * v[p] + v[shifted(n, dim, p, axis, false)]) * inv
        })
        .collect();
    Field::from_raw(*g, out)
}

/// `d f / d x_axis`.
pub fn partial(f: &Field, axis: usize, backend: Backend) -> Field {
    debug_assert!(axis < f.grid().dim());
    match backend {
        Backend::Central => central_partial(f, axis),
        Backend::Spectral => spectral::partial(f, axis),
    }
}

/// Discrete gradient, one field per axis.
pub fn gradient(f: &Field, backend: Backend) -> Vec<Field> {
    (0..f.grid().dim()).map(|a| partial(f, a, backend)).collect()
}

/// `d^2 f / dx_j dx_k`. The central pure second derivative uses the
/// three-point stencil; mixed derivatives compose two central differences.
pub fn second_partial(f: &Field, j: usize, k: usize, backend: Backend) -> Field {
    match backend {
        Backend::Central if j == k => central_pure_second(f, j),
        Backend::Central => central_partial(&central_partial(f, j), k),
        Backend::Spectral => spectral::second_partial(f, j, k),
    }
}

/// Discrete Laplacian (`2n+1`-point stencil for the central backend).
pub fn laplacian(f: &Field, backend: Backend) -> Field {
    match backend {
        Backend::Central => {
            let mut out = central_pure_second(f, 0);
            for a in 1..f.grid().dim() {
                out.axpy(1.0, &central_pure_second(f, a));
            }
            out
        }
        Backend::Spectral => spectral::laplacian(f),
    }
}

/// Discrete divergence of a vector field given by components.
pub fn divergence(g: &[Field], backend: Backend) -> Field {
    let mut out = partial(&g[0], 0, backend);
    for (a, comp) in g.iter().enumerate().skip(1) {
        out.axpy(1.0, &partial(comp, a, backend));
    }
    out
}

/// `h^n sum f` with compensated summation.
pub fn integrate(f: &Field) -> f64 {
    let mut s = NeumaierSum::new();
    for &v in f.values() {
        s.add(v);
    }
    s.total() * f.grid().cell_volume()
}

/// `h^n sum f g`.
pub fn inner(f: &Field, g: &Field) -> f64 {
    let mut s = NeumaierSum::new();
    for (&a, &b) in f.values().iter().zip(g.values()) {
        s.add(a * b);
    }
    s.total() * f.grid().cell_volume()
}

/// Returns `(sum_jk int p_jk^2, int (lap p)^2)` evaluated with spectral
/// derivatives.
pub fn mixed_second_identity_check(p: &Field) -> Result<(f64, f64)> {
    let dim = p.grid().dim();
    if dim != 2 {
        return Err(Error::Dimension(format!("identity check needs n = 2, got n = {dim}")));
    }
    let mut lhs = 0.0;
    for j in 0..2 {
        for k in 0..2 {
            let d = spectral::second_partial(p, j, k);
            lhs += inner(&d, &d);
        }
    }
    let lap = spectral::laplacian(p);
    Ok((lhs, inner(&lap, &lap)))
}
