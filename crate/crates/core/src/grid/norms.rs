use serde::{Deserialize, Serialize};

use super::{gradient, inner, Backend, Field};
use crate::error::{Error, Result};
use crate::numerics::NeumaierSum;
use crate::tree::{ScenarioTree, TreeField};

/// Norms of a tree-indexed trajectory.
///
/// `l2_space` and `h1_space` are expectations of the spatial norms of the
/// terminal slice; the time norms are `sqrt(E sum_k dt ||f(t_k)||^2)` over the
/// left endpoints of the window; `linf` is the largest nodal magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormReport {
    pub l2_space: f64,
    pub h1_space: f64,
    pub l2_time_h1: f64,
    pub l2_time_l2: f64,
    pub linf: f64,
}

/// Squared `L^2` and `H^1` norms of one slice.
pub(crate) fn slice_norms_sq(f: &Field, backend: Backend) -> (f64, f64) {
    let l2 = inner(f, f);
    let g: f64 = gradient(f, backend).iter().map(|d| inner(d, d)).sum();
    (l2, l2 + g)
}

/// Norms over the whole horizon with central derivatives.
pub fn sobolev_norms(trajectory: &TreeField<Field>, tree: &ScenarioTree) -> Result<NormReport> {
    sobolev_norms_window(trajectory, tree, 0, tree.steps(), Backend::Central)
}

/// Norms restricted to left endpoints `k_start <= k < k_end`; the space norms
/// are taken at depth `k_end`.
pub fn sobolev_norms_window(
    trajectory: &TreeField<Field>,
    tree: &ScenarioTree,
    k_start: usize,
    k_end: usize,
    backend: Backend,
) -> Result<NormReport> {
    if trajectory.len() != tree.len() {
        return Err(Error::ShapeMismatch(format!(
            "trajectory has {} nodes, tree has {}",
            trajectory.len(),
            tree.len()
        )));
    }
    if k_start > k_end || k_end > tree.steps() {
        return Err(Error::ShapeMismatch(format!(
            "time window [{k_start}, {k_end}) outside 0..={}",
            tree.steps()
        )));
    }
    let grid = *trajectory.get(0).grid();
    if trajectory.iter().any(|f| !f.grid().same_space(&grid)) {
        return Err(Error::ShapeMismatch("trajectory slices live on different grids".into()));
    }
    let dt = tree.dt();
    let mut t_l2 = NeumaierSum::new();
    let mut t_h1 = NeumaierSum::new();
    for k in k_start..k_end {
        for &id in tree.level(k) {
            let (l2, h1) = slice_norms_sq(trajectory.get(id), backend);
            let w = tree.node(id).prob * dt;
            t_l2.add(w * l2);
            t_h1.add(w * h1);
        }
    }
    let mut s_l2 = NeumaierSum::new();
    let mut s_h1 = NeumaierSum::new();
    for &id in tree.level(k_end) {
        let (l2, h1) = slice_norms_sq(trajectory.get(id), backend);
        s_l2.add(tree.node(id).prob * l2.sqrt());
        s_h1.add(tree.node(id).prob * h1.sqrt());
    }
    let linf = trajectory.iter().fold(0.0f64, |m, f| m.max(f.max_abs()));
    let l2_space = s_l2.total().max(0.0);
    Ok(NormReport {
        l2_space,
        h1_space: s_h1.total().max(l2_space),
        l2_time_h1: t_h1.total().max(0.0).sqrt(),
        l2_time_l2: t_l2.total().max(0.0).sqrt(),
        linf,
    })
}

/// `E ||f(t_d)||` in `L^2` (`h1 = false`) or `H^1` (`h1 = true`).
pub fn expected_norm_at_depth(
    trajectory: &TreeField<Field>,
    tree: &ScenarioTree,
    depth: usize,
    h1: bool,
    backend: Backend,
) -> f64 {
    tree.expectation_at_depth(depth, |id| {
        let (l2, hh) = slice_norms_sq(trajectory.get(id), backend);
        if h1 {
            hh.sqrt()
        } else {
            l2.sqrt()
        }
    })
}

/// `l2_time_h1` norm of the node-wise difference of two trajectories.
pub fn norms_difference(a: &TreeField<Field>, b: &TreeField<Field>, tree: &ScenarioTree) -> Result<f64> {
    if a.len() != tree.len() || b.len() != tree.len() {
        return Err(Error::ShapeMismatch("trajectories not defined on every node".into()));
    }
    let dt = tree.dt();
    let mut s = NeumaierSum::new();
    for k in 0..tree.steps() {
        for &id in tree.level(k) {
            let d = a.get(id).sub(b.get(id));
            s.add(tree.node(id).prob * dt * slice_norms_sq(&d, Backend::Central).1);
        }
    }
    Ok(s.total().max(0.0).sqrt())
}
