//! Defect of the discrete solutions with respect to the linearized
//! difference system.
//!
//! The transport part `B1 rho + B2 . grad rho = div(rho B2)` is applied in the
//! conservative form of the forward scheme, so the defect vanishes exactly
//! whenever `grad_p B` does not depend on `p`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coefficients::LinearizedCoefficients;
use crate::error::{Error, Result};
use crate::grid::{gradient, inner, laplacian, partial, second_partial, Backend, Field};
use crate::model::MfgProblem;
use crate::numerics::NeumaierSum;
use crate::solver::{flux_divergence, fp_drift, MfgSolution, TransportScheme};
use crate::tree::Children;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferenceResidual {
    /// `sqrt(E sum_k dt ||R_fp(t_k)||^2)`.
    pub fp: f64,
    /// `sqrt(E sum_k dt ||R_hjb(t_k)||^2)`.
    pub hjb: f64,
}

/// Substitutes `rho1 - rho2`, `u1 - u2`, `U1 - U2` into the discrete
/// linearized equations and returns the defect norms over interior nodes.
pub fn residual_of_difference_system(
    problem: &MfgProblem,
    s1: &MfgSolution,
    s2: &MfgSolution,
    coeffs: &LinearizedCoefficients,
    scheme: TransportScheme,
) -> Result<DifferenceResidual> {
    let tree = &problem.tree;
    if coeffs.nodes.len() != tree.len() {
        return Err(Error::ShapeMismatch("coefficients not built on this tree".into()));
    }
    let grid = problem.grid;
    let dim = grid.dim();
    let dt = grid.dt();
    let bh = problem.beta_hat();
    let beta = problem.beta();
    let interior: Vec<usize> = (0..tree.steps()).flat_map(|k| tree.level(k).iter().copied()).collect();
    let per_node: Vec<(usize, f64, f64)> = interior
        .par_iter()
        .map(|&id| {
            let k = tree.node(id).depth;
            let c = &coeffs.nodes[id];
            let (r1, r2) = (s1.rho.get(id), s2.rho.get(id));
            let rho = r1.sub(r2);
            let u = s1.u.get(id).sub(s2.u.get(id));
            let gu = gradient(&u, Backend::Central);

            // forward equation
            let a1 = fp_drift(problem, k, s1.u.get(id));
            let a2 = fp_drift(problem, k, s2.u.get(id));
            let mut r_fp = flux_divergence(r1, &a1, scheme).sub(&flux_divergence(r2, &a2, scheme));
            r_fp.axpy(-1.0, &flux_divergence(&rho, &c.b2, scheme));
            for j in 0..dim {
                r_fp.axpy(-1.0, &c.b3[j].mul(&gu[j]));
                for kk in 0..dim {
                    r_fp.axpy(-1.0, &c.b4[j][kk].mul(&second_partial(&u, j, kk, Backend::Central)));
                }
            }

            // backward equation
            let (m, mart) = node_means(problem, s1, s2, id);
            let mut r_hjb = u.zip_map(&m, |a, b| (a - b) / dt);
            r_hjb.axpy(-bh, &laplacian(&u, Backend::Central));
            if beta != 0.0 {
                r_hjb.axpy(-beta, &partial(&mart, 0, Backend::Central));
            }
            for j in 0..dim {
                r_hjb.axpy(-1.0, &c.b5[j].mul(&gu[j]));
            }
            if !problem.coupling.is_zero() {
                r_hjb.axpy(-1.0, &c.f1.mul(&problem.kernel.apply(&rho)));
                r_hjb.axpy(-1.0, &c.f2.mul(&rho));
            }
            (id, inner(&r_fp, &r_fp), inner(&r_hjb, &r_hjb))
        })
        .collect();
    let mut fp = NeumaierSum::new();
    let mut hjb = NeumaierSum::new();
    for (id, a, b) in per_node {
        let w = tree.node(id).prob * dt;
        fp.add(w * a);
        hjb.add(w * b);
    }
    Ok(DifferenceResidual { fp: fp.total().max(0.0).sqrt(), hjb: hjb.total().max(0.0).sqrt() })
}

// conditional mean of u1 - u2 over the children, and the stored U1 - U2
fn node_means(problem: &MfgProblem, s1: &MfgSolution, s2: &MfgSolution, id: usize) -> (Field, Field) {
    let diff = |c: usize| s1.u.get(c).sub(s2.u.get(c));
    let mean = match problem.tree.node(id).children {
        Children::Binary { plus, minus } => diff(plus).zip_map(&diff(minus), |a, b| 0.5 * (a + b)),
        Children::Single(c) => diff(c),
        Children::Leaf => unreachable!("interior node"),
    };
    (mean, s1.big_u.get(id).sub(s2.big_u.get(id)))
}
