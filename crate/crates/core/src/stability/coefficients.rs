//! Coefficients of the linear system satisfied by the difference of two
//! solutions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient, second_partial, Backend, Field};
use crate::model::MfgProblem;
use crate::numerics::gauss_legendre_unit;
use crate::solver::MfgSolution;

/// Coefficients at one tree node. Vector and matrix entries beyond the
/// spatial dimension are absent.
#[derive(Debug, Clone)]
pub struct NodeCoefficients {
    pub b1: Field,
    pub b2: Vec<Field>,
    pub b3: Vec<Field>,
    /// `b4[j][k]`.
    pub b4: Vec<Vec<Field>>,
    pub b5: Vec<Field>,
    pub f1: Field,
    pub f2: Field,
}

/// Coefficient fields on every node of the tree.
#[derive(Debug, Clone)]
pub struct LinearizedCoefficients {
    pub nodes: Vec<NodeCoefficients>,
}

/// Sup norms of every coefficient group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub b5: f64,
    pub f1: f64,
    pub f2: f64,
    /// Sum of the above.
    pub total: f64,
}

impl LinearizedCoefficients {
    pub fn bounds(&self) -> CoefficientBounds {
        let sup = |f: &Field| f.max_abs();
        let vsup = |v: &[Field]| v.iter().map(sup).fold(0.0, f64::max);
        let mut b = CoefficientBounds { b1: 0.0, b2: 0.0, b3: 0.0, b4: 0.0, b5: 0.0, f1: 0.0, f2: 0.0, total: 0.0 };
        for n in &self.nodes {
            b.b1 = b.b1.max(sup(&n.b1));
            b.b2 = b.b2.max(vsup(&n.b2));
            b.b3 = b.b3.max(vsup(&n.b3));
            b.b4 = b.b4.max(n.b4.iter().map(|r| vsup(r)).fold(0.0, f64::max));
            b.b5 = b.b5.max(vsup(&n.b5));
            b.f1 = b.f1.max(sup(&n.f1));
            b.f2 = b.f2.max(sup(&n.f2));
        }
        let dim = self.nodes.first().map_or(1, |n| n.b2.len()) as f64;
        // vector groups count each component, the matrix group each entry
        b.total = b.b1 + dim * (b.b2 + b.b3 + b.b5) + dim * dim * b.b4 + b.f1 + b.f2;
        b
    }
}

fn check_pair(problem: &MfgProblem, s1: &MfgSolution, s2: &MfgSolution) -> Result<()> {
    let n = problem.tree.len();
    for (name, s) in [("first", s1), ("second", s2)] {
        if s.rho.len() != n || s.u.len() != n || s.big_u.len() != n {
            return Err(Error::ShapeMismatch(format!("{name} solution is not defined on the problem tree")));
        }
    }
    Ok(())
}

/// Builds the coefficients with 8-point Gauss-Legendre quadrature in the
/// segment parameter `tau`, from `grad u1` towards `grad u2`.
pub fn build_linearized_coefficients(
    problem: &MfgProblem,
    s1: &MfgSolution,
    s2: &MfgSolution,
) -> Result<LinearizedCoefficients> {
    check_pair(problem, s1, s2)?;
    let grid = problem.grid;
    let dim = grid.dim();
    let ham = &problem.hamiltonian;
    let gl = gauss_legendre_unit(8);
    let tree = &problem.tree;
    let nodes: Vec<NodeCoefficients> = (0..tree.len())
        .into_par_iter()
        .map(|id| {
            let t = grid.time(tree.node(id).depth);
            let (u1, u2) = (s1.u.get(id), s2.u.get(id));
            let (r1, r2) = (s1.rho.get(id), s2.rho.get(id));
            let g1 = gradient(u1, Backend::Central);
            let g2 = gradient(u2, Backend::Central);
            let hess = |u: &Field| -> Vec<Vec<Field>> {
                (0..dim).map(|j| (0..dim).map(|k| second_partial(u, j, k, Backend::Central)).collect()).collect()
            };
            let (h1, h2) = (hess(u1), hess(u2));
            let gr2 = gradient(r2, Backend::Central);
            let coupled = !problem.coupling.is_zero();
            let (k1, k2) = if coupled {
                (problem.kernel.apply(r1), problem.kernel.apply(r2))
            } else {
                (Field::zeros(grid), Field::zeros(grid))
            };
            let len = grid.len();
            let mut b1 = vec![0.0; len];
            let mut b2 = vec![vec![0.0; len]; dim];
            let mut b3 = vec![vec![0.0; len]; dim];
            let mut b4 = vec![vec![vec![0.0; len]; dim]; dim];
            let mut b5 = vec![vec![0.0; len]; dim];
            let mut f1 = vec![0.0; len];
            let mut f2 = vec![0.0; len];
            for i in 0..len {
                let x = grid.point(i);
                let mut p1 = [0.0; 2];
                let mut p2 = [0.0; 2];
                for a in 0..dim {
                    p1[a] = g1[a].values()[i];
                    p2[a] = g2[a].values()[i];
                }
                let hp = ham.hess_pp(t, x, p1);
                let dpx = ham.d_px(t, x, p1);
                let gp = ham.grad_p(t, x, p1);
                let rho2 = r2.values()[i];
                let mut v = 0.0;
                for j in 0..dim {
                    v += dpx[j][j];
                    for k in 0..dim {
                        v += hp[j][k] * h1[j][k].values()[i];
                        b4[j][k][i] = rho2 * hp[j][k];
                    }
                    b2[j][i] = gp[j];
                }
                b1[i] = v;
                // tau averages along p1 + tau (p2 - p1)
                let mut hbar = [[0.0; 2]; 2];
                let mut dbar = [[[0.0; 2]; 2]; 2];
                let mut tbar = [[[0.0; 2]; 2]; 2];
                let mut gbar = [0.0; 2];
                let (y1, y2) = (k1.values()[i], k2.values()[i]);
                let (z1, z2) = (r1.values()[i], r2.values()[i]);
                let (mut fy, mut fz) = (0.0, 0.0);
                for &(tau, w) in &gl {
                    let p = [p1[0] + tau * (p2[0] - p1[0]), p1[1] + tau * (p2[1] - p1[1])];
                    let hh = ham.hess_pp(t, x, p);
                    let dd = ham.d_ppx(t, x, p);
                    let tt = ham.third_ppp(t, x, p);
                    let gg = ham.grad_p(t, x, p);
                    for j in 0..2 {
                        gbar[j] += w * gg[j];
                        for k in 0..2 {
                            hbar[j][k] += w * hh[j][k];
                            for l in 0..2 {
                                dbar[j][k][l] += w * dd[j][k][l];
                                tbar[j][k][l] += w * tt[j][k][l];
                            }
                        }
                    }
                    if coupled {
                        let (y, z) = (y1 + tau * (y2 - y1), z1 + tau * (z2 - z1));
                        fy += w * problem.coupling.dy(y, z);
                        fz += w * problem.coupling.dz(y, z);
                    }
                }
                for j in 0..dim {
                    let mut v = 0.0;
                    for k in 0..dim {
                        v += gr2[k].values()[i] * hbar[j][k];
                        v += rho2 * dbar[j][k][k];
                        for jp in 0..dim {
                            v += rho2 * h2[jp][k].values()[i] * tbar[jp][k][j];
                        }
                    }
                    b3[j][i] = v;
                    b5[j][i] = gbar[j];
                }
                f1[i] = fy;
                f2[i] = fz;
            }
            let wrap = |v: Vec<f64>| Field::from_raw(grid, v);
            NodeCoefficients {
                b1: wrap(b1),
                b2: b2.into_iter().map(wrap).collect(),
                b3: b3.into_iter().map(wrap).collect(),
                b4: b4.into_iter().map(|r| r.into_iter().map(wrap).collect()).collect(),
                b5: b5.into_iter().map(wrap).collect(),
                f1: wrap(f1),
                f2: wrap(f2),
            }
        })
        .collect();
    Ok(LinearizedCoefficients { nodes })
}
