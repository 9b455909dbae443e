//! Discrete check of the transformed difference system used in the
//! uniqueness argument, and of the Poincare-type bounds on the slab.
//!
//! For two solutions with sources `r1 R`, `r2 R` the differences give
//! `v = (u1 - u2) / R`, `V = (U1 - U2) / R`, `w = chi d1 v`,
//! `W = chi d1 V`, `p = chi d1 (rho1 - rho2)`. The drift of `w` and `p` read
//! off the tree is compared with the transformed right-hand sides; on the
//! solver's own discretization the defect is a truncation error.
//!
//! Conventions: the source enters `H = B + r R + F`, the noise is scalar
//! along `e1`, and the density difference solves
//! `d rho - bh lap rho dt = (B1 rho + B2 . grad rho + B3 . grad u + B4 : hess u) dt - beta d1 rho dW`.
//! The HJB drift gives `f1 = -R_t/R - bh lap R/R - B5 . grad R/R`,
//! `f2 = -2 bh grad R/R - B5`, `f3 = -beta R_x1/R`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{InversionProblem, SHAPE_FLOOR};
use crate::error::{Error, Result};
use crate::grid::{laplacian, partial, second_partial, Backend, Field, Grid};
use crate::numerics::NeumaierSum;
use crate::solver::{fp_deterministic_step, fp_drift, MfgSolution, TransportScheme};
use crate::stability::build_linearized_coefficients;
use crate::tree::Children;

/// Worst ratio `int (int_0^x1 f)^2 / int f^2` over the nodes, per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareCheck {
    pub field: String,
    pub worst_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformationReport {
    /// `sqrt(E sum_k dt int_G res^2)` of the equation for `w`.
    pub w_eq: f64,
    /// The same for `p`.
    pub p_eq: f64,
    /// Norm of the drift `(E[w_{k+1}] - w_k) / dt`, for relative reading.
    pub w_eq_scale: f64,
    pub p_eq_scale: f64,
    /// Defects with the opposite sign on the `bh` terms and without the
    /// `1 / R` coupling corrections.
    pub w_eq_alt_signs: f64,
    pub p_eq_alt_signs: f64,
    pub poincare: Vec<PoincareCheck>,
    pub nodes: usize,
}

impl TransformationReport {
    pub fn w_eq_relative(&self) -> f64 {
        ratio(self.w_eq, self.w_eq_scale)
    }

    pub fn p_eq_relative(&self) -> f64 {
        ratio(self.p_eq, self.p_eq_scale)
    }

    pub fn poincare_worst(&self) -> f64 {
        self.poincare.iter().map(|c| c.worst_ratio).fold(0.0, f64::max)
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        a
    }
}

fn d(f: &Field, axis: usize) -> Field {
    partial(f, axis, Backend::Central)
}

fn dd(f: &Field, j: usize, k: usize) -> Field {
    second_partial(f, j, k, Backend::Central)
}

fn div(a: &Field, b: &Field) -> Field {
    a.zip_map(b, |x, y| x / y)
}

// `R`, `R_t`, `grad R`, `hess R` at `t_k`
struct ShapeFields {
    r: Field,
    rt: Field,
    grad: Vec<Field>,
    hess: Vec<Vec<Field>>,
}

fn shape_fields(ip: &InversionProblem, k: usize) -> ShapeFields {
    let g = ip.base.grid;
    let n = g.dim();
    let t = g.time(k);
    let jets: Vec<_> = (0..g.len()).map(|i| ip.base.source.shape.jet(t, g.point(i), n)).collect();
    let of = |f: &dyn Fn(usize) -> f64| Field::from_raw(g, (0..g.len()).map(f).collect());
    ShapeFields {
        r: of(&|i| jets[i].value),
        rt: of(&|i| jets[i].dt),
        grad: (0..n).map(|a| of(&|i| jets[i].grad[a])).collect(),
        hess: (0..n).map(|a| (0..n).map(|b| of(&|i| jets[i].hess[a][b])).collect()).collect(),
    }
}

#[derive(Default, Clone, Copy)]
struct NodeSums {
    w_eq: f64,
    p_eq: f64,
    w_eq_scale: f64,
    p_eq_scale: f64,
    w_eq_alt_signs: f64,
    p_eq_alt_signs: f64,
}

const POINCARE_FIELDS: [&str; 6] = ["w", "W", "p", "grad w", "hess w", "grad p"];

/// Evaluates the transformed equations on the pair `(sol1, sol2)` with
/// sources `r1 R` and `r2 R`, and the Poincare bounds on the transformed
/// fields. The forward defect uses each node's own one-step transition.
pub fn verify_theorem3_transformations(
    ip: &InversionProblem,
    sol1: &MfgSolution,
    sol2: &MfgSolution,
    scheme: TransportScheme,
) -> Result<TransformationReport> {
    let floor = ip.shape_floor();
    if floor < SHAPE_FLOOR {
        return Err(Error::Precondition(format!("inf over G of |R| is {floor:.3e}, below {SHAPE_FLOOR:e}")));
    }
    let problem = &ip.base;
    let tree = &problem.tree;
    let g = problem.grid;
    let n = g.dim();
    let dt = g.dt();
    let bh = problem.beta_hat();
    let beta = problem.beta();
    let coupled = !problem.coupling.is_zero();
    let coeffs = build_linearized_coefficients(problem, sol1, sol2)?;
    let shapes: Vec<ShapeFields> = (0..=g.steps()).map(|k| shape_fields(ip, k)).collect();
    let wg = ip.region_weights();
    let wint = |f: &Field| -> f64 { f.values().iter().zip(wg).map(|(v, w)| w * v * v).sum() };
    let cut = ip.cutoff;
    let interior: Vec<usize> = (0..g.steps()).flat_map(|k| tree.level(k).iter().copied()).collect();
    let per_node: Vec<(usize, NodeSums, [f64; 6])> = interior
        .par_iter()
        .map(|&id| {
            let k = tree.node(id).depth;
            let (t, tn) = (g.time(k), g.time(k + 1));
            let (chi, chin, chit) = (cut.chi(t), cut.chi(tn), cut.chi_t(t));
            let sh = &shapes[k];
            let rn = &shapes[k + 1].r;
            let c = &coeffs.nodes[id];
            let u = sol1.u.get(id).sub(sol2.u.get(id));
            let big = sol1.big_u.get(id).sub(sol2.big_u.get(id));
            let rho = sol1.rho.get(id).sub(sol2.rho.get(id));
            let v = div(&u, &sh.r);
            let bv = div(&big, &sh.r);
            let v1 = d(&v, 0);
            let w = v1.scaled(chi);
            let bw = d(&bv, 0).scaled(chi);
            let gv: Vec<Field> = (0..n).map(|a| d(&v, a)).collect();
            let gw: Vec<Field> = (0..n).map(|a| d(&w, a)).collect();

            // equation for w
            let diff = |cid: usize| sol1.u.get(cid).sub(sol2.u.get(cid));
            let mu = match tree.node(id).children {
                Children::Binary { plus, minus } => Field::lincomb(&diff(plus), 0.5, &diff(minus), 0.5),
                Children::Single(cid) => diff(cid),
                Children::Leaf => unreachable!("interior depth"),
            };
            let mw = d(&div(&mu, rn), 0).scaled(chin);
            let drift_w = mw.zip_map(&w, |a, b| (a - b) / dt);
            let mut lhs = drift_w.clone();
            lhs.axpy(bh, &laplacian(&w, Backend::Central));
            let grad_r_over_r: Vec<Field> = sh.grad.iter().map(|gr| div(gr, &sh.r)).collect();
            let lap_r: Field = (0..n).fold(Field::zeros(g), |acc, a| acc.add(&sh.hess[a][a]));
            let b5_dot: Field = (0..n).fold(Field::zeros(g), |acc, a| acc.add(&c.b5[a].mul(&grad_r_over_r[a])));
            let rt_over_r = div(&sh.rt, &sh.r);
            let lap_over_r = div(&lap_r, &sh.r);
            let f3 = grad_r_over_r[0].scaled(-beta);
            let rhs_w = |sgn: f64, alt_signs: bool| -> Field {
                // sgn = -1 is the consistent sign of the bh terms, +1 the alternative
                let mut f1 = rt_over_r.scaled(-1.0);
                f1.axpy(sgn * bh, &lap_over_r);
                f1.axpy(-1.0, &b5_dot);
                let f2: Vec<Field> = (0..n)
                    .map(|a| Field::lincomb(&grad_r_over_r[a], sgn * 2.0 * bh, &c.b5[a], -1.0))
                    .collect();
                let mut out = v1.scaled(chit);
                out.axpy(1.0, &f1.mul(&w));
                let mut inner = d(&f1, 0).mul(&v);
                for a in 0..n {
                    out.axpy(1.0, &f2[a].mul(&gw[a]));
                    inner.axpy(1.0, &d(&f2[a], 0).mul(&gv[a]));
                }
                out.axpy(1.0, &f3.mul(&bw));
                inner.axpy(1.0, &d(&f3, 0).mul(&bv));
                out.axpy(-beta, &d(&bw, 0));
                if coupled {
                    let ky = problem.kernel.apply(&rho);
                    let ky1 = problem.kernel.apply_dx1(&rho);
                    let mut phi1 = d(&c.f1, 0).mul(&ky).add(&c.f1.mul(&ky1));
                    let f2_part = d(&c.f2, 0).mul(&rho).add(&c.f2.mul(&d(&rho, 0)));
                    if alt_signs {
                        phi1 = div(&phi1, &sh.r).add(&f2_part);
                    } else {
                        phi1.axpy(1.0, &f2_part);
                        phi1 = div(&phi1, &sh.r);
                        let level = c.f1.mul(&ky).add(&c.f2.mul(&rho));
                        phi1.axpy(-1.0, &level.mul(&grad_r_over_r[0]).zip_map(&sh.r, |a, b| a / b));
                    }
                    inner.axpy(-1.0, &phi1);
                }
                out.axpy(chi, &inner);
                out
            };
            let res_w_eq = lhs.sub(&rhs_w(-1.0, false));
            let res_w_eq_p = lhs.sub(&rhs_w(1.0, true));

            // equation for p
            let one_step = |s: &MfgSolution| {
                let a = fp_drift(problem, k, s.u.get(id));
                fp_deterministic_step(problem, s.rho.get(id), &a, scheme)
            };
            let mp = d(&one_step(sol1).sub(&one_step(sol2)), 0).scaled(chin);
            let rho1 = d(&rho, 0);
            let p = rho1.scaled(chi);
            let drift_p = mp.zip_map(&p, |a, b| (a - b) / dt);
            let lap_p = laplacian(&p, Backend::Central);
            let mut g1 = Field::zeros(g);
            for a in 0..n {
                g1.axpy(1.0, &c.b3[a].mul(&sh.grad[a]));
                for b in 0..n {
                    g1.axpy(1.0, &c.b4[a][b].mul(&sh.hess[a][b]));
                }
            }
            let g2: Vec<Field> = (0..n)
                .map(|j| {
                    let mut f = sh.r.mul(&c.b3[j]);
                    for kk in 0..n {
                        f.axpy(1.0, &c.b4[j][kk].add(&c.b4[kk][j]).mul(&sh.grad[kk]));
                    }
                    f
                })
                .collect();
            let g3: Vec<Vec<Field>> = (0..n).map(|j| (0..n).map(|kk| c.b4[j][kk].mul(&sh.r)).collect()).collect();
            let grho: Vec<Field> = (0..n).map(|a| d(&rho, a)).collect();
            let mut body = g1.mul(&w);
            let mut inner = d(&g1, 0).mul(&v);
            let gp: Vec<Field> = (0..n).map(|a| d(&p, a)).collect();
            let mut hw = Vec::new();
            for j in 0..n {
                body.axpy(1.0, &g2[j].mul(&gw[j]));
                inner.axpy(1.0, &d(&g2[j], 0).mul(&gv[j]));
                body.axpy(1.0, &c.b2[j].mul(&gp[j]));
                inner.axpy(1.0, &d(&c.b2[j], 0).mul(&grho[j]));
                for kk in 0..n {
                    let wjk = dd(&w, j, kk);
                    body.axpy(1.0, &g3[j][kk].mul(&wjk));
                    inner.axpy(1.0, &d(&g3[j][kk], 0).mul(&dd(&v, j, kk)));
                    hw.push(wjk);
                }
            }
            body.axpy(1.0, &c.b1.mul(&p));
            inner.axpy(1.0, &d(&c.b1, 0).mul(&rho));
            body.axpy(chi, &inner);
            let mut res_p_eq = drift_p.sub(&lap_p.scaled(bh));
            res_p_eq.axpy(-chit, &rho1);
            res_p_eq.axpy(-1.0, &body);
            let mut res_p_eq_p = drift_p.sub(&lap_p.scaled(beta));
            res_p_eq_p.axpy(chit, &rho1);
            res_p_eq_p.axpy(-1.0, &body);

            let sums = NodeSums {
                w_eq: wint(&res_w_eq),
                p_eq: wint(&res_p_eq),
                w_eq_scale: wint(&drift_w),
                p_eq_scale: wint(&drift_p),
                w_eq_alt_signs: wint(&res_w_eq_p),
                p_eq_alt_signs: wint(&res_p_eq_p),
            };
            let mut ratios = [0.0; 6];
            ratios[0] = poincare_ratio(ip, &w);
            ratios[1] = poincare_ratio(ip, &bw);
            ratios[2] = poincare_ratio(ip, &p);
            ratios[3] = gw.iter().map(|f| poincare_ratio(ip, f)).fold(0.0, f64::max);
            ratios[4] = hw.iter().map(|f| poincare_ratio(ip, f)).fold(0.0, f64::max);
            ratios[5] = gp.iter().map(|f| poincare_ratio(ip, f)).fold(0.0, f64::max);
            (id, sums, ratios)
        })
        .collect();
    let mut acc = [(); 6].map(|_| NeumaierSum::new());
    let mut worst = [0.0f64; 6];
    for (id, s, r) in &per_node {
        let wt = tree.node(*id).prob * dt;
        for (a, v) in acc.iter_mut().zip([s.w_eq, s.p_eq, s.w_eq_scale, s.p_eq_scale, s.w_eq_alt_signs, s.p_eq_alt_signs]) {
            a.add(wt * v);
        }
        for (m, x) in worst.iter_mut().zip(r) {
            *m = m.max(*x);
        }
    }
    let root = |a: &NeumaierSum| a.total().max(0.0).sqrt();
    Ok(TransformationReport {
        w_eq: root(&acc[0]),
        p_eq: root(&acc[1]),
        w_eq_scale: root(&acc[2]),
        p_eq_scale: root(&acc[3]),
        w_eq_alt_signs: root(&acc[4]),
        p_eq_alt_signs: root(&acc[5]),
        poincare: POINCARE_FIELDS
            .iter()
            .zip(worst)
            .map(|(f, r)| PoincareCheck { field: f.to_string(), worst_ratio: r })
            .collect(),
        nodes: per_node.len(),
    })
}

// int_G (int_0^x1 f)^2 / int_G f^2 by trapezoid quadrature along x1 on the
// slab; zero for a vanishing field
fn poincare_ratio(ip: &InversionProblem, f: &Field) -> f64 {
    let g = ip.base.grid;
    let [i0, i1] = ip.face_indices();
    let n = g.points();
    let h = g.spacing();
    let nt = ip.transverse();
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for j in 0..nt {
        let at = |i: usize| f.values()[if g.dim() == 1 { i } else { i * n + j }];
        let (a, b) = slab_integrals((i0..=i1).map(at), h);
        lhs += a;
        rhs += b;
    }
    if rhs > 0.0 {
        lhs / rhs
    } else {
        0.0
    }
}

// trapezoid `(int_0^1 F^2, int_0^1 f^2)` with `F` the cumulative trapezoid
// integral of equally spaced samples `f` on `[0, 1]`
fn slab_integrals(samples: impl Iterator<Item = f64>, h: f64) -> (f64, f64) {
    let f: Vec<f64> = samples.collect();
    let m = f.len();
    let mut big = vec![0.0; m];
    for i in 1..m {
        big[i] = big[i - 1] + 0.5 * h * (f[i - 1] + f[i]);
    }
    let trap = |v: &[f64]| -> f64 {
        (0..m).map(|i| if i == 0 || i + 1 == m { 0.5 } else { 1.0 } * h * v[i] * v[i]).sum()
    };
    (trap(&big), trap(&f))
}

/// Random-field check of `int_G (int_0^x1 w)^2 <= int_G w^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareReport {
    pub cases: usize,
    pub worst_ratio: f64,
    /// `4 / pi^2`, the sharp constant on `(0, 1)` for `v(0) = 0`.
    pub sharp_constant: f64,
    pub holds: bool,
}

/// Draws `cases` band-limited `v = sum_m a_m sin(m pi x1 / 2) c(x')` with
/// `v(0, x') = 0`, sets `w = v_x1` and compares both sides by quadrature on
/// `(0, 1) x (-1, 1)`.
pub fn poincare_random_check(cases: usize, seed: u64) -> Result<PoincareReport> {
    if cases == 0 {
        return Err(Error::Config("at least one Poincare case is needed".into()));
    }
    let grid = Grid::new(2, 1.0, 64, 1.0, 1)?;
    let nx = 1025;
    let h = 1.0 / (nx - 1) as f64;
    let pi = std::f64::consts::PI;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let a: Vec<f64> = (1..=8).map(|m| (2.0 * rng.random::<f64>() - 1.0) / m as f64).collect();
        let b: Vec<f64> = (0..4).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let (mut lhs, mut rhs) = (0.0, 0.0);
        for j in 0..grid.points() {
            let y = grid.coord(j);
            let c: f64 = 1.0 + b.iter().enumerate().map(|(l, bl)| bl * (pi * (l + 1) as f64 * y).cos()).sum::<f64>();
            let w = (0..nx).map(|i| {
                let x = i as f64 * h;
                c * a.iter().enumerate().map(|(m, am)| {
                    let k = 0.5 * pi * (m + 1) as f64;
                    am * k * (k * x).cos()
                }).sum::<f64>()
            });
            let (l, r) = slab_integrals(w, h);
            lhs += l * grid.spacing();
            rhs += r * grid.spacing();
        }
        if rhs > 0.0 {
            worst = worst.max(lhs / rhs);
        }
    }
    Ok(PoincareReport { cases, worst_ratio: worst, sharp_constant: 4.0 / (pi * pi), holds: worst <= 1.0 })
}
