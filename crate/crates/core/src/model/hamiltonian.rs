//! Reduced Hamiltonians `B(t, x, p)` with analytic derivatives.
//!
//! Each model stores the already-minimized form of
//! `inf_a { B(a) . p + b(a) }`. Arrays are sized for `n = 2`; in one
//! dimension the second components are ignored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];
pub type Ten2 = [[[f64; 2]; 2]; 2];

/// Smoothing radius of the bounded-control model.
pub const BOUNDED_SMOOTHING: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum Hamiltonian {
    /// `B = 0`.
    Zero,
    /// `B = -|p|^2 / 2`, from controls `a` with running cost `|a|^2 / 2`.
    Quadratic,
    /// `B = c(x) . p` with `c_j(x) = drift_j + amp * sin(wave * x_j)`.
    Affine {
        #[serde(default)]
        drift: Vec2,
        #[serde(default)]
        amp: f64,
        #[serde(default = "default_wave")]
        wave: f64,
    },
    /// `B = -M_a sqrt(|p|^2 + eps^2)`, from controls bounded by `M_a`.
    Bounded { max_control: f64 },
}

fn default_wave() -> f64 {
    std::f64::consts::PI
}

impl Default for Hamiltonian {
    fn default() -> Self {
        Hamiltonian::Quadratic
    }
}

impl Hamiltonian {
    /// Registry lookup with default parameters.
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "zero" => Ok(Self::Zero),
            "quadratic" => Ok(Self::Quadratic),
            "affine" => Ok(Self::Affine { drift: [0.5, 0.0], amp: 0.25, wave: default_wave() }),
            "bounded" => Ok(Self::Bounded { max_control: 1.0 }),
            other => Err(Error::Model(format!("unknown hamiltonian '{other}'"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Quadratic => "quadratic",
            Self::Affine { .. } => "affine",
            Self::Bounded { .. } => "bounded",
        }
    }

    /// Whether `B` does not depend on `p`, so the FP drift vanishes.
    pub fn is_p_independent(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Affine { drift, amp, .. } => *amp == 0.0 && drift.iter().all(|d| *d == 0.0),
            _ => false,
        }
    }

    /// Whether `grad_p B` does not depend on `p`.
    pub fn is_affine_in_p(&self) -> bool {
        matches!(self, Self::Zero | Self::Affine { .. })
    }

    fn affine_c(drift: &Vec2, amp: f64, wave: f64, x: Vec2) -> Vec2 {
        [drift[0] + amp * (wave * x[0]).sin(), drift[1] + amp * (wave * x[1]).sin()]
    }

    pub fn b(&self, _t: f64, x: Vec2, p: Vec2) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Quadratic => -0.5 * (p[0] * p[0] + p[1] * p[1]),
            Self::Affine { drift, amp, wave } => {
                let c = Self::affine_c(drift, *amp, *wave, x);
                c[0] * p[0] + c[1] * p[1]
            }
            Self::Bounded { max_control } => {
                -max_control * (p[0] * p[0] + p[1] * p[1] + BOUNDED_SMOOTHING.powi(2)).sqrt()
            }
        }
    }

    /// `grad_p B`.
    pub fn grad_p(&self, _t: f64, x: Vec2, p: Vec2) -> Vec2 {
        match self {
            Self::Zero => [0.0; 2],
            Self::Quadratic => [-p[0], -p[1]],
            Self::Affine { drift, amp, wave } => Self::affine_c(drift, *amp, *wave, x),
            Self::Bounded { max_control } => {
                let s = (p[0] * p[0] + p[1] * p[1] + BOUNDED_SMOOTHING.powi(2)).sqrt();
                [-max_control * p[0] / s, -max_control * p[1] / s]
            }
        }
    }

    /// `B_{p_j p_k}`.
    pub fn hess_pp(&self, _t: f64, _x: Vec2, p: Vec2) -> Mat2 {
        match self {
            Self::Zero | Self::Affine { .. } => [[0.0; 2]; 2],
            Self::Quadratic => [[-1.0, 0.0], [0.0, -1.0]],
            Self::Bounded { max_control } => {
                let s2 = p[0] * p[0] + p[1] * p[1] + BOUNDED_SMOOTHING.powi(2);
                let s = s2.sqrt();
                let mut h = [[0.0; 2]; 2];
                for j in 0..2 {
                    for k in 0..2 {
                        let d = if j == k { 1.0 } else { 0.0 };
                        h[j][k] = -max_control * (d / s - p[j] * p[k] / (s2 * s));
                    }
                }
                h
            }
        }
    }

    /// `B_{p_j x_k}`.
    pub fn d_px(&self, _t: f64, x: Vec2, _p: Vec2) -> Mat2 {
        match self {
            Self::Affine { amp, wave, .. } => {
                [[amp * wave * (wave * x[0]).cos(), 0.0], [0.0, amp * wave * (wave * x[1]).cos()]]
            }
            _ => [[0.0; 2]; 2],
        }
    }

    /// `B_{p_j p_k p_l}`.
    pub fn third_ppp(&self, _t: f64, _x: Vec2, p: Vec2) -> Ten2 {
        match self {
            Self::Bounded { max_control } => {
                let s2 = p[0] * p[0] + p[1] * p[1] + BOUNDED_SMOOTHING.powi(2);
                let s3 = s2 * s2.sqrt();
                let s5 = s3 * s2;
                let dl = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                let mut out = [[[0.0; 2]; 2]; 2];
                for j in 0..2 {
                    for k in 0..2 {
                        for l in 0..2 {
                            out[j][k][l] = -max_control
                                * (-dl(j, k) * p[l] / s3
                                    - (dl(j, l) * p[k] + dl(k, l) * p[j]) / s3
                                    + 3.0 * p[j] * p[k] * p[l] / s5);
                        }
                    }
                }
                out
            }
            _ => [[[0.0; 2]; 2]; 2],
        }
    }

    /// `B_{p_j p_k x_l}`; zero for every shipped model.
    pub fn d_ppx(&self, _t: f64, _x: Vec2, _p: Vec2) -> Ten2 {
        [[[0.0; 2]; 2]; 2]
    }

    /// Largest relative deviations between the analytic derivatives and
    /// central differences with step `step` at the given probe points:
    /// `(grad_p B, higher derivatives)`.
    pub fn derivative_check(&self, probes: &[(f64, Vec2, Vec2)], step: f64, dim: usize) -> (f64, f64) {
        let rel = |a: f64, fd: f64| (a - fd).abs() / a.abs().max(1.0);
        let mut worst_grad = 0.0f64;
        let mut worst = 0.0f64;
        for &(t, x, p) in probes {
            let g = self.grad_p(t, x, p);
            let h = self.hess_pp(t, x, p);
            let dpx = self.d_px(t, x, p);
            let third = self.third_ppp(t, x, p);
            for j in 0..dim {
                let (mut pp, mut pm) = (p, p);
                pp[j] += step;
                pm[j] -= step;
                let fd = (self.b(t, x, pp) - self.b(t, x, pm)) / (2.0 * step);
                worst_grad = worst_grad.max(rel(g[j], fd));
                let (gp, gm) = (self.grad_p(t, x, pp), self.grad_p(t, x, pm));
                let (hp, hm) = (self.hess_pp(t, x, pp), self.hess_pp(t, x, pm));
                for k in 0..dim {
                    worst = worst.max(rel(h[k][j], (gp[k] - gm[k]) / (2.0 * step)));
                    for l in 0..dim {
                        worst = worst.max(rel(third[k][l][j], (hp[k][l] - hm[k][l]) / (2.0 * step)));
                    }
                }
                let (mut xp, mut xm) = (x, x);
                xp[j] += step;
                xm[j] -= step;
                let (gxp, gxm) = (self.grad_p(t, xp, p), self.grad_p(t, xm, p));
                for k in 0..dim {
                    worst = worst.max(rel(dpx[k][j], (gxp[k] - gxm[k]) / (2.0 * step)));
                }
            }
        }
        (worst_grad, worst)
    }

    /// `max_{j', j, k} (|B_{p_j x_j}| + |B_{p_j p_k}| + |B_{p_j p_k x_k}| +
    /// |B_{p_j' p_j p_k}|)` over the probe points.
    pub fn derivative_bound(&self, probes: &[(f64, Vec2, Vec2)], dim: usize) -> f64 {
        let mut worst = 0.0f64;
        for &(t, x, p) in probes {
            let dpx = self.d_px(t, x, p);
            let h = self.hess_pp(t, x, p);
            let ppx = self.d_ppx(t, x, p);
            let ppp = self.third_ppp(t, x, p);
            for jp in 0..dim {
                for j in 0..dim {
                    for k in 0..dim {
                        let s = dpx[j][j].abs() + h[j][k].abs() + ppx[j][k][k].abs() + ppp[jp][j][k].abs();
                        worst = worst.max(s);
                    }
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probes(seed: u64) -> Vec<(f64, Vec2, Vec2)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..64)
            .map(|_| {
                let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let mut p: Vec2 = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                if p[0].abs() + p[1].abs() < 0.2 {
                    p[0] += 0.5;
                }
                (rng.random_range(0.0..1.0), x, p)
            })
            .collect()
    }

    #[test]
    fn quadratic_value() {
        assert_eq!(Hamiltonian::Quadratic.b(0.0, [0.0; 2], [2.0, 0.0]), -2.0);
    }

    #[test]
    fn derivatives_match_differences() {
        for id in ["zero", "quadratic", "affine", "bounded"] {
            let h = Hamiltonian::from_id(id).unwrap();
            for dim in [1, 2] {
                let (grad, higher) = h.derivative_check(&probes(7), 1e-4, dim);
                assert!(grad <= 1e-6, "{id} n={dim}: {grad}");
                assert!(higher <= 1e-4, "{id} n={dim}: {higher}");
            }
        }
    }

    #[test]
    fn quadratic_bound_is_one() {
        let b = Hamiltonian::Quadratic.derivative_bound(&probes(3), 2);
        assert_eq!(b, 1.0);
    }

    #[test]
    fn registry_round_trip() {
        for id in ["zero", "quadratic", "affine", "bounded"] {
            let h = Hamiltonian::from_id(id).unwrap();
            assert_eq!(h.id(), id);
            let s = serde_json::to_string(&h).unwrap();
            assert_eq!(serde_json::from_str::<Hamiltonian>(&s).unwrap(), h);
        }
        assert!(Hamiltonian::from_id("nope").is_err());
    }
}
