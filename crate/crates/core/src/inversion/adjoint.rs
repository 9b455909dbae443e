//! Discrete adjoint of the tree solver.
//!
//! The converged solution is the fixed point `u = T(u) = Psi(Phi(u), u; r)`
//! of one Picard sweep: `Phi` is the forward FP sweep and `Psi` the backward
//! HJB induction with frozen gradient. For a functional `j(Phi(u), u)` the
//! adjoint `z` solves `z = T_u^T z + j_u + Phi_u^T j_rho`, and the cotangent
//! of the Hamiltonian field at every node follows from `Psi^T z`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{gradient, partial, spectral, Backend, Field};
use crate::model::MfgProblem;
use crate::solver::{flux_divergence_vjp, fp_drift, TransportScheme};
use crate::tree::{Children, TreeField};

fn zeros(problem: &MfgProblem) -> Vec<Field> {
    vec![Field::zeros(problem.grid); problem.tree.len()]
}

fn norm(v: &[Field]) -> f64 {
    v.iter().map(|f| f.values().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
}

/// Cotangents produced by the transposed HJB induction.
#[derive(Debug, Clone)]
pub struct HjbCotangents {
    pub rho: TreeField<Field>,
    pub u_prev: TreeField<Field>,
    /// Cotangent of `H(t_k, x, grad u_prev; rho)` at every node (zero at the
    /// leaves).
    pub hamiltonian: TreeField<Field>,
}

/// Transpose of the linearized HJB induction applied to `z`, a cotangent of
/// the value function. Runs forward in depth.
pub fn hjb_vjp(
    problem: &MfgProblem,
    rho: &TreeField<Field>,
    u_prev: &TreeField<Field>,
    z: &TreeField<Field>,
) -> Result<HjbCotangents> {
    let tree = &problem.tree;
    let grid = problem.grid;
    let dt = grid.dt();
    let beta = problem.beta();
    let mut acc: Vec<Field> = z.iter().cloned().collect();
    let mut rho_bar = zeros(problem);
    let mut u_bar = zeros(problem);
    let mut h_bar = zeros(problem);
    let coupled = !problem.coupling.is_zero();
    let drift = !problem.hamiltonian.is_p_independent();
    for k in 0..tree.steps() {
        let level = tree.level(k);
        let out: Vec<(usize, Field, Field, Field, Field, Field)> = level
            .par_iter()
            .map(|&id| {
                let b = spectral::implicit_diffusion_solve(&acc[id], dt * problem.beta_hat());
                let hb = b.scaled(dt);
                let mart = if beta != 0.0 {
                    partial(&b, 0, Backend::Central).scaled(-dt * beta)
                } else {
                    Field::zeros(grid)
                };
                let mut rb = Field::zeros(grid);
                if coupled {
                    let r = rho.get(id);
                    let y = problem.kernel.apply(r);
                    let fy = y.zip_map(r, |a, c| problem.coupling.dy(a, c)).mul(&hb);
                    let fz = y.zip_map(r, |a, c| problem.coupling.dz(a, c)).mul(&hb);
                    rb = problem.kernel.apply(&fy);
                    rb.axpy(1.0, &fz);
                }
                let mut ub = Field::zeros(grid);
                if drift {
                    let a = problem.drift_field(k, &gradient(u_prev.get(id), Backend::Central));
                    for (axis, comp) in a.iter().enumerate() {
                        ub.axpy(-1.0, &partial(&comp.mul(&hb), axis, Backend::Central));
                    }
                }
                (id, b, mart, rb, ub, hb)
            })
            .collect();
        for (id, b, mart, rb, ub, hb) in out {
            h_bar[id] = hb;
            rho_bar[id] = rb;
            u_bar[id] = ub;
            match tree.node(id).children {
                Children::Binary { plus, minus } => {
                    let s = 0.5 / dt.sqrt();
                    acc[plus].axpy(0.5, &b);
                    acc[plus].axpy(s, &mart);
                    acc[minus].axpy(0.5, &b);
                    acc[minus].axpy(-s, &mart);
                }
                Children::Single(c) => acc[c].axpy(1.0, &b),
                Children::Leaf => unreachable!("interior depth"),
            }
        }
    }
    Ok(HjbCotangents {
        rho: TreeField::from_vec(tree, rho_bar)?,
        u_prev: TreeField::from_vec(tree, u_bar)?,
        hamiltonian: TreeField::from_vec(tree, h_bar)?,
    })
}

/// Transpose of the linearized forward FP sweep (as a function of the value
/// function) applied to `rho_bar`. Runs backward in depth.
pub fn fp_vjp(
    problem: &MfgProblem,
    rho: &TreeField<Field>,
    u: &TreeField<Field>,
    rho_bar: &TreeField<Field>,
    scheme: TransportScheme,
) -> Result<TreeField<Field>> {
    let tree = &problem.tree;
    let grid = problem.grid;
    let dt = grid.dt();
    let dim = grid.dim();
    let s = problem.beta() * tree.increment();
    let mut acc: Vec<Field> = rho_bar.iter().cloned().collect();
    let mut u_bar = zeros(problem);
    let drift = !problem.hamiltonian.is_p_independent();
    for k in (0..tree.steps()).rev() {
        let level = tree.level(k);
        let base = level[0];
        let mut star_bar = vec![Field::zeros(grid); level.len()];
        for &c in tree.level(k + 1) {
            let d1 = if s != 0.0 { Some(partial(&acc[c], 0, Backend::Central)) } else { None };
            for &(src, sign, w) in tree.incoming(c) {
                let sb = &mut star_bar[src - base];
                sb.axpy(w, &acc[c]);
                if let Some(d) = &d1 {
                    sb.axpy(if sign >= 0 { w * s } else { -w * s }, d);
                }
            }
        }
        let out: Vec<(usize, Field, Field)> = level
            .par_iter()
            .zip(star_bar.par_iter())
            .map(|(&id, sb)| {
                let q = spectral::implicit_diffusion_solve(sb, dt * problem.beta_hat());
                let mut rb = q.clone();
                let mut ub = Field::zeros(grid);
                if drift {
                    let t = grid.time(k);
                    let gu = gradient(u.get(id), Backend::Central);
                    let a = fp_drift(problem, k, u.get(id));
                    let (drb, dab) = flux_divergence_vjp(rho.get(id), &a, scheme, &q);
                    rb.axpy(dt, &drb);
                    let mut pb = vec![vec![0.0; grid.len()]; dim];
                    for i in 0..grid.len() {
                        let mut p = [0.0; 2];
                        for (ax, g) in gu.iter().enumerate() {
                            p[ax] = g.values()[i];
                        }
                        let h = problem.hamiltonian.hess_pp(t, grid.point(i), p);
                        for bx in 0..dim {
                            pb[bx][i] = (0..dim).map(|ax| h[ax][bx] * dt * dab[ax].values()[i]).sum();
                        }
                    }
                    for (bx, v) in pb.into_iter().enumerate() {
                        let f = Field::from_raw(grid, v);
                        ub.axpy(-1.0, &partial(&f, bx, Backend::Central));
                    }
                }
                (id, rb, ub)
            })
            .collect();
        for (id, rb, ub) in out {
            acc[id].axpy(1.0, &rb);
            u_bar[id] = ub;
        }
    }
    TreeField::from_vec(tree, u_bar)
}

/// Converged adjoint of the Picard fixed point.
#[derive(Debug, Clone)]
pub struct AdjointState {
    pub z: TreeField<Field>,
    /// Cotangent of the Hamiltonian field at every node.
    pub hamiltonian_bar: TreeField<Field>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `z = T_u^T z + j_u + Phi_u^T j_rho` by damped fixed-point
/// iteration with the same damping as the forward Picard sweeps.
#[allow(clippy::too_many_arguments)]
pub fn fixed_point_adjoint(
    problem: &MfgProblem,
    rho: &TreeField<Field>,
    u: &TreeField<Field>,
    j_rho: &TreeField<Field>,
    j_u: &TreeField<Field>,
    scheme: TransportScheme,
    damping: f64,
    tol: f64,
    max_iters: usize,
) -> Result<AdjointState> {
    let tree = &problem.tree;
    let mut z: Vec<Field> = zeros(problem);
    let mut residual = f64::INFINITY;
    for it in 0..max_iters {
        let zt = TreeField::from_vec(tree, z.clone())?;
        let hj = hjb_vjp(problem, rho, u, &zt)?;
        let mut seed: Vec<Field> = hj.rho.iter().cloned().collect();
        for (a, b) in seed.iter_mut().zip(j_rho.iter()) {
            a.axpy(1.0, b);
        }
        let from_fp = fp_vjp(problem, rho, u, &TreeField::from_vec(tree, seed)?, scheme)?;
        let new: Vec<Field> = hj
            .u_prev
            .iter()
            .zip(from_fp.iter())
            .zip(j_u.iter())
            .map(|((a, b), c)| {
                let mut f = a.add(b);
                f.axpy(1.0, c);
                f
            })
            .collect();
        let diff: Vec<Field> = new.iter().zip(&z).map(|(a, b)| a.sub(b)).collect();
        residual = norm(&diff) / norm(&new).max(f64::MIN_POSITIVE);
        let gamma = if it == 0 { 1.0 } else { damping };
        for (a, d) in z.iter_mut().zip(&diff) {
            a.axpy(gamma, d);
        }
        if !residual.is_finite() {
            return Err(Error::NonFinite(format!("adjoint iterate at sweep {}", it + 1)));
        }
        if residual <= tol || norm(&new) == 0.0 {
            let zt = TreeField::from_vec(tree, z)?;
            let hj = hjb_vjp(problem, rho, u, &zt)?;
            return Ok(AdjointState { z: zt, hamiltonian_bar: hj.hamiltonian, iterations: it + 1, residual });
        }
    }
    Err(Error::Solver(format!("adjoint iteration stopped at relative residual {residual:.3e} above {tol:e}")))
}
