//! Exact discrete solutions of the auxiliary backward and forward equations.
//!
//! Backward data are smooth functionals `w = Phi(t, W, x)` of the tree path;
//! `f2` is the exact martingale part and `f1` the exact drift residual.
//! Forward data are generated node by node so that the children values carry
//! exactly the prescribed `-beta d1 p` noise coefficient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{partial, spectral, Backend, Field, Grid};
use crate::model::beta_hat;
use crate::tree::{Children, ScenarioTree, TreeField, TreeKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Overall scale; 0 gives the zero datum.
    pub amplitude: f64,
    /// Number of Fourier modes along `x1`.
    pub modes: usize,
    /// Restrict to `sin(m pi x1 / L)` profiles, which vanish at `x1 = 0` and
    /// `x1 = L`.
    pub odd_in_x1: bool,
    /// Scale of the random forcing of forward data.
    pub forcing: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { seed: 0, amplitude: 1.0, modes: 3, odd_in_x1: false, forcing: 1.0 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Mode {
    m1: f64,
    m2: f64,
    coeff: f64,
    phase1: f64,
    phase2: f64,
    alpha: f64,
    omega: f64,
    psi: f64,
    gamma: f64,
    kappa: f64,
    chi: f64,
}

/// Random band-limited functional `sum_m a_m(t, W) s_m(x)` with smooth,
/// bounded `a_m`.
#[derive(Debug, Clone)]
pub struct RandomFunctional {
    modes: Vec<Mode>,
    scale: f64,
    odd: bool,
}

impl RandomFunctional {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, count: usize, scale: f64, odd: bool) -> Self {
        let mut modes = Vec::new();
        let pi = std::f64::consts::PI;
        let transverse: Vec<usize> = if dim == 2 { (0..=1).collect() } else { vec![0] };
        for m1 in 1..=count.max(1) {
            for &m2 in &transverse {
                let z: f64 = StandardNormal.sample(rng);
                let decay = ((m1 * m1 + m2 * m2) as f64).powf(1.5);
                modes.push(Mode {
                    m1: m1 as f64,
                    m2: m2 as f64,
                    coeff: 0.2 + z.abs() / decay,
                    phase1: if odd { 0.0 } else { rng.random_range(0.0..2.0 * pi) },
                    phase2: rng.random_range(0.0..2.0 * pi),
                    alpha: rng.random_range(0.5..1.5),
                    omega: rng.random_range(0.0..3.0),
                    psi: rng.random_range(0.0..2.0 * pi),
                    gamma: rng.random_range(0.5..1.5),
                    kappa: rng.random_range(0.5..2.0),
                    chi: rng.random_range(0.0..2.0 * pi),
                });
            }
        }
        Self { modes, scale, odd }
    }

    pub fn is_odd_in_x1(&self) -> bool {
        self.odd
    }

    pub fn eval(&self, grid: &Grid, t: f64, w: f64) -> Field {
        let k = std::f64::consts::PI / grid.half_width();
        let amps: Vec<f64> = self
            .modes
            .iter()
            .map(|m| {
                self.scale * m.coeff * (m.alpha + (m.omega * t + m.psi).sin()) * (m.gamma + (m.kappa * w + m.chi).cos())
            })
            .collect();
        let dim = grid.dim();
        Field::from_fn(*grid, |x| {
            self.modes
                .iter()
                .zip(&amps)
                .map(|(m, a)| {
                    let s1 = (k * m.m1 * x[0] + m.phase1).sin();
                    let s2 = if dim == 2 { (k * m.m2 * x[1] + m.phase2).cos() } else { 1.0 };
                    a * s1 * s2
                })
                .sum()
        })
    }
}

/// Datum of the backward equation `dw + bh lap w dt = (f1 + f3.f2 - beta div f2) dt + f2 dW`.
#[derive(Debug, Clone)]
pub struct BackwardDatum {
    pub grid: Grid,
    pub tree: ScenarioTree,
    pub beta: f64,
    pub w: TreeField<Field>,
    pub f1: TreeField<Field>,
    /// `e1` component of `f2`; zero on leaves.
    pub f2: TreeField<Field>,
    /// Constant vector `f3`, if present.
    pub f3: Option<[f64; 2]>,
}

/// Datum of the forward equation `dp - bh lap p dt = g1 dt - beta d1 p dW`.
#[derive(Debug, Clone)]
pub struct ForwardDatum {
    pub grid: Grid,
    pub tree: ScenarioTree,
    pub beta: f64,
    pub p: TreeField<Field>,
    pub g1: TreeField<Field>,
}

#[derive(Debug, Clone)]
pub enum SyntheticDatum {
    Backward(BackwardDatum),
    Forward(ForwardDatum),
}

/// Treatment of the diffusion when generating forward data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForwardScheme {
    /// `g1` is drawn and `p` advanced explicitly.
    Explicit,
    /// The conditional mean is advanced implicitly and `g1` is the residual.
    #[default]
    Implicit,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Precondition(format!("beta = {beta} outside [0, 1]")));
    }
    Ok(())
}

fn check_tree(grid: &Grid, tree: &ScenarioTree) -> Result<()> {
    if tree.steps() != grid.steps() || (tree.dt() - grid.dt()).abs() > 1e-15 * grid.dt() {
        return Err(Error::ShapeMismatch("tree and grid time axes differ".into()));
    }
    Ok(())
}

/// Builds a backward datum; `f3` adds the bounded-domain forcing `f3 . f2`.
pub fn make_backward(
    spec: &SyntheticSpec,
    grid: Grid,
    tree: &ScenarioTree,
    beta: f64,
    f3: Option<[f64; 2]>,
) -> Result<BackwardDatum> {
    check_beta(beta)?;
    check_tree(&grid, tree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phi = RandomFunctional::new(&mut rng, grid.dim(), spec.modes, spec.amplitude, spec.odd_in_x1);
    let w = TreeField::from_fn(tree, |id| {
        let node = tree.node(id);
        phi.eval(&grid, grid.time(node.depth), node.w)
    });
    Ok(backward_from_values(grid, tree, beta, w, f3))
}

/// Completes a path-indexed field `w` into a backward datum.
pub fn backward_from_values(
    grid: Grid,
    tree: &ScenarioTree,
    beta: f64,
    w: TreeField<Field>,
    f3: Option<[f64; 2]>,
) -> BackwardDatum {
    let bh = beta_hat(beta);
    let dt = grid.dt();
    let zero = Field::zeros(grid);
    let mut f1 = TreeField::filled(tree, zero.clone());
    let mut f2 = TreeField::filled(tree, zero);
    for node in tree.nodes() {
        let (m, mart) = match node.children {
            Children::Binary { plus, minus } => (
                crate::tree::conditional_expectation(w.get(plus), w.get(minus)),
                crate::tree::martingale_part(w.get(plus), w.get(minus), dt),
            ),
            Children::Single(c) => (w.get(c).clone(), Field::zeros(grid)),
            Children::Leaf => continue,
        };
        let here = w.get(node.id);
        let mut r = m.zip_map(here, |a, b| (a - b) / dt);
        r.axpy(bh, &spectral::laplacian(here));
        if beta != 0.0 {
            r.axpy(beta, &spectral::partial(&mart, 0));
        }
        if let Some(c) = f3 {
            r.axpy(-c[0], &mart);
        }
        f1.set(node.id, r);
        f2.set(node.id, mart);
    }
    BackwardDatum { grid, tree: tree.clone(), beta, w, f1, f2, f3 }
}

/// Builds a forward datum. Requires a full or degenerate tree, or `beta = 0`.
pub fn make_forward(
    spec: &SyntheticSpec,
    grid: Grid,
    tree: &ScenarioTree,
    beta: f64,
    scheme: ForwardScheme,
) -> Result<ForwardDatum> {
    check_beta(beta)?;
    check_tree(&grid, tree)?;
    if tree.kind() == TreeKind::Recombining && beta != 0.0 {
        return Err(Error::Precondition(
            "forward data with noise need one parent per node (full tree)".into(),
        ));
    }
    if tree.kind() == TreeKind::Degenerate && beta != 0.0 {
        return Err(Error::Precondition("a degenerate tree needs beta = 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let init = RandomFunctional::new(&mut rng, grid.dim(), spec.modes, spec.amplitude, spec.odd_in_x1);
    let force =
        RandomFunctional::new(&mut rng, grid.dim(), spec.modes, spec.amplitude * spec.forcing, spec.odd_in_x1);
    let bh = beta_hat(beta);
    let dt = grid.dt();
    let s = beta * tree.increment();
    let zero = Field::zeros(grid);
    let mut p = TreeField::filled(tree, zero.clone());
    let mut g1 = TreeField::filled(tree, zero);
    p.set(0, init.eval(&grid, 0.0, 0.0));
    for k in 0..tree.steps() {
        for &id in tree.level(k) {
            let node = tree.node(id);
            let here = p.get(id).clone();
            let lap = spectral::laplacian(&here);
            let forcing = force.eval(&grid, grid.time(k), node.w);
            let mean = match scheme {
                ForwardScheme::Explicit => {
                    let mut m = here.clone();
                    m.axpy(dt * bh, &lap);
                    m.axpy(dt, &forcing);
                    g1.set(id, forcing);
                    m
                }
                ForwardScheme::Implicit => {
                    let mut rhs = here.clone();
                    rhs.axpy(dt, &forcing);
                    let m = implicit_spectral(&rhs, dt * bh);
                    let mut g = m.zip_map(&here, |a, b| (a - b) / dt);
                    g.axpy(-bh, &lap);
                    g1.set(id, g);
                    m
                }
            };
            match node.children {
                Children::Binary { plus, minus } => {
                    let d1 = spectral::partial(&here, 0);
                    p.set(plus, Field::lincomb(&mean, 1.0, &d1, -s));
                    p.set(minus, Field::lincomb(&mean, 1.0, &d1, s));
                }
                Children::Single(c) => p.set(c, mean),
                Children::Leaf => {}
            }
        }
    }
    Ok(ForwardDatum { grid, tree: tree.clone(), beta, p, g1 })
}

/// Forward datum of a prescribed deterministic field `p(t, x)` with `beta = 0`.
pub fn forward_from_fn(grid: Grid, tree: &ScenarioTree, f: impl Fn(f64, [f64; 2]) -> f64) -> Result<ForwardDatum> {
    check_tree(&grid, tree)?;
    let bh = beta_hat(0.0);
    let dt = grid.dt();
    let p = TreeField::from_fn(tree, |id| {
        let t = grid.time(tree.node(id).depth);
        Field::from_fn(grid, |x| f(t, x))
    });
    let mut g1 = TreeField::filled(tree, Field::zeros(grid));
    for node in tree.nodes() {
        let child = match node.children {
            Children::Binary { plus, .. } => plus,
            Children::Single(c) => c,
            Children::Leaf => continue,
        };
        let here = p.get(node.id);
        let mut g = p.get(child).zip_map(here, |a, b| (a - b) / dt);
        g.axpy(-bh, &spectral::laplacian(here));
        g1.set(node.id, g);
    }
    Ok(ForwardDatum { grid, tree: tree.clone(), beta: 0.0, p, g1 })
}

fn implicit_spectral(b: &Field, c: f64) -> Field {
    // (I - c lap_spectral)^{-1} b, exact on the retained modes
    let grid = *b.grid();
    let mut hat = spectral::forward(b);
    let dim = grid.dim();
    for (flat, z) in hat.iter_mut().enumerate() {
        let idx = grid.multi_index(flat);
        let s: f64 = (0..dim).map(|a| spectral::wavenumber(&grid, idx[a]).powi(2)).sum();
        *z /= 1.0 + c * s;
    }
    spectral::inverse(&grid, hat)
}

impl BackwardDatum {
    /// Largest defect of the discrete backward equation and of the
    /// martingale representation over all interior nodes.
    pub fn residual(&self) -> f64 {
        let dt = self.grid.dt();
        let bh = beta_hat(self.beta);
        let s = self.tree.increment();
        let mut worst = 0.0f64;
        for node in self.tree.nodes() {
            let kids: Vec<(usize, f64)> = match node.children {
                Children::Binary { plus, minus } => vec![(plus, 1.0), (minus, -1.0)],
                Children::Single(c) => vec![(c, 0.0)],
                Children::Leaf => continue,
            };
            let here = self.w.get(node.id);
            let mut drift = self.f1.get(node.id).clone();
            drift.axpy(-self.beta, &spectral::partial(self.f2.get(node.id), 0));
            if let Some(c) = self.f3 {
                drift.axpy(c[0], self.f2.get(node.id));
            }
            let lap = spectral::laplacian(here);
            for (c, sign) in kids {
                let mut lhs = self.w.get(c).sub(here);
                lhs.axpy(bh * dt, &lap);
                let mut rhs = drift.scaled(dt);
                rhs.axpy(sign * s, self.f2.get(node.id));
                let scale = 1.0 + here.max_abs();
                worst = worst.max(lhs.sub(&rhs).max_abs() / scale);
            }
        }
        worst
    }
}

impl ForwardDatum {
    /// Largest defect of the discrete forward equation over all edges.
    pub fn residual(&self) -> f64 {
        let dt = self.grid.dt();
        let bh = beta_hat(self.beta);
        let s = self.beta * self.tree.increment();
        let mut worst = 0.0f64;
        for node in self.tree.nodes() {
            let kids: Vec<(usize, f64)> = match node.children {
                Children::Binary { plus, minus } => vec![(plus, 1.0), (minus, -1.0)],
                Children::Single(c) => vec![(c, 0.0)],
                Children::Leaf => continue,
            };
            let here = self.p.get(node.id);
            let lap = spectral::laplacian(here);
            let d1 = spectral::partial(here, 0);
            for (c, sign) in kids {
                let mut lhs = self.p.get(c).sub(here);
                lhs.axpy(-bh * dt, &lap);
                let mut rhs = self.g1.get(node.id).scaled(dt);
                rhs.axpy(-sign * s, &d1);
                let scale = 1.0 + here.max_abs();
                worst = worst.max(lhs.sub(&rhs).max_abs() / scale);
            }
        }
        worst
    }
}

/// Largest boundary trace on the faces `x1 = 0` and `x1 = 1` over all nodes,
/// relative to the field scale.
pub(crate) fn slab_trace(fields: &TreeField<Field>) -> Result<f64> {
    let grid = *fields.get(0).grid();
    let (i0, i1) = slab_faces(&grid)?;
    let mut worst = 0.0f64;
    for f in fields.iter() {
        let scale = f.max_abs().max(1.0);
        for flat in 0..grid.len() {
            let i = grid.multi_index(flat)[0];
            if i == i0 || i == i1 {
                worst = worst.max(f.values()[flat].abs() / scale);
            }
        }
    }
    Ok(worst)
}

/// Grid indices of the faces `x1 = 0` and `x1 = 1`.
pub(crate) fn slab_faces(grid: &Grid) -> Result<(usize, usize)> {
    let i0 = grid.index_of(0.0);
    // x1 = 1 may coincide with the periodic image of -L
    let i1 = grid.index_of(1.0).or_else(|| {
        if (grid.half_width() - 1.0).abs() < 1e-12 {
            grid.index_of(-1.0)
        } else {
            None
        }
    });
    match (i0, i1) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::Precondition("x1 = 0 and x1 = 1 must be grid points".into())),
    }
}

pub(crate) fn gradient_spectral(f: &Field) -> Vec<Field> {
    (0..f.grid().dim()).map(|a| partial(f, a, Backend::Spectral)).collect()
}
