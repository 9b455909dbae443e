//! Binary scenario trees for the scalar common noise.
//!
//! Every non-leaf node of a binary tree has a `+` child and a `-` child with
//! increments `+sqrt(dt)` and `-sqrt(dt)`, each with conditional probability
//! 1/2. A degenerate tree has a single path with zero increments and stands
//! in for the noise-free case.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;

/// Largest depth accepted for a non-recombining tree.
pub const MAX_FULL_DEPTH: usize = 14;

/// Topology of a scenario tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeKind {
    /// `2^d` nodes at depth `d`, one per increment path.
    Full,
    /// `d + 1` nodes at depth `d`, indexed by the number of up moves.
    Recombining,
    /// One node per depth and `dW = 0`.
    Degenerate,
}

/// Successors of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Children {
    Binary { plus: usize, minus: usize },
    Single(usize),
    Leaf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub depth: usize,
    /// Unconditional probability of reaching the node.
    pub prob: f64,
    /// Canonical parent; for recombining trees the parent reached through the
    /// `+` move when it exists.
    pub parent: Option<usize>,
    /// Sign of the increment on the canonical incoming edge (0 at the root
    /// and on degenerate trees).
    pub sign: i8,
    pub children: Children,
    /// Value of the driving Brownian path at the node.
    pub w: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioTree {
    kind: TreeKind,
    steps: usize,
    dt: f64,
    nodes: Vec<Node>,
    levels: Vec<Vec<usize>>,
    // (source node, sign of the edge, weight) with weights summing to one;
    // weight = P(source) / (2 P(node)) on binary trees.
    incoming: Vec<Vec<(usize, i8, f64)>>,
}

/// Builds a binary tree with `K` steps of size `dt`.
pub fn build_tree(steps: usize, dt: f64, recombining: bool) -> Result<ScenarioTree> {
    ScenarioTree::new(
        steps,
        dt,
        if recombining { TreeKind::Recombining } else { TreeKind::Full },
    )
}

impl ScenarioTree {
    pub fn new(steps: usize, dt: f64, kind: TreeKind) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Structure("tree depth K must be at least 1".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Structure(format!("dt = {dt} must be positive")));
        }
        if kind == TreeKind::Full && steps > MAX_FULL_DEPTH {
            return Err(Error::Capacity(format!(
                "non-recombining tree with K = {steps} exceeds the limit K <= {MAX_FULL_DEPTH}"
            )));
        }
        let sq = dt.sqrt();
        let mut nodes = Vec::new();
        let mut levels: Vec<Vec<usize>> = Vec::with_capacity(steps + 1);
        nodes.push(Node {
            id: 0,
            depth: 0,
            prob: 1.0,
            parent: None,
            sign: 0,
            children: Children::Leaf,
            w: 0.0,
        });
        levels.push(vec![0]);
        for d in 1..=steps {
            let prev = levels[d - 1].clone();
            let mut level = Vec::new();
            match kind {
                TreeKind::Degenerate => {
                    let p = prev[0];
                    let id = nodes.len();
                    nodes.push(Node {
                        id,
                        depth: d,
                        prob: 1.0,
                        parent: Some(p),
                        sign: 0,
                        children: Children::Leaf,
                        w: 0.0,
                    });
                    nodes[p].children = Children::Single(id);
                    level.push(id);
                }
                TreeKind::Full => {
                    for &p in &prev {
                        let plus = nodes.len();
                        let minus = plus + 1;
                        let (prob, w) = (nodes[p].prob * 0.5, nodes[p].w);
                        for (id, sign) in [(plus, 1i8), (minus, -1i8)] {
                            nodes.push(Node {
                                id,
                                depth: d,
                                prob,
                                parent: Some(p),
                                sign,
                                children: Children::Leaf,
                                w: w + sign as f64 * sq,
                            });
                            level.push(id);
                        }
                        nodes[p].children = Children::Binary { plus, minus };
                    }
                }
                TreeKind::Recombining => {
                    // node j at depth d has j up moves
                    let base = nodes.len();
                    for j in 0..=d {
                        let from_minus = if j < d { nodes[prev[j]].prob } else { 0.0 };
                        let from_plus = if j > 0 { nodes[prev[j - 1]].prob } else { 0.0 };
                        let (parent, sign) =
                            if j > 0 { (prev[j - 1], 1i8) } else { (prev[0], -1i8) };
                        nodes.push(Node {
                            id: base + j,
                            depth: d,
                            prob: 0.5 * (from_minus + from_plus),
                            parent: Some(parent),
                            sign,
                            children: Children::Leaf,
                            w: (2.0 * j as f64 - d as f64) * sq,
                        });
                        level.push(base + j);
                    }
                    for (j, &p) in prev.iter().enumerate() {
                        nodes[p].children = Children::Binary { plus: base + j + 1, minus: base + j };
                    }
                }
            }
            levels.push(level);
        }
        let mut incoming: Vec<Vec<(usize, i8, f64)>> = vec![Vec::new(); nodes.len()];
        for node in &nodes {
            match node.children {
                Children::Binary { plus, minus } => {
                    incoming[plus].push((node.id, 1, 0.5 * node.prob));
                    incoming[minus].push((node.id, -1, 0.5 * node.prob));
                }
                Children::Single(c) => incoming[c].push((node.id, 0, node.prob)),
                Children::Leaf => {}
            }
        }
        for (id, inc) in incoming.iter_mut().enumerate() {
            let p = nodes[id].prob;
            for e in inc.iter_mut() {
                e.2 /= p;
            }
        }
        Ok(Self { kind, steps, dt, nodes, levels, incoming })
    }

    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    pub fn is_recombining(&self) -> bool {
        self.kind == TreeKind::Recombining
    }

    /// Number of time steps `K`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Magnitude of one noise increment (0 on degenerate trees).
    pub fn increment(&self) -> f64 {
        if self.kind == TreeKind::Degenerate {
            0.0
        } else {
            self.dt.sqrt()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        0
    }

    /// Node ids at depth `d`.
    pub fn level(&self, d: usize) -> &[usize] {
        &self.levels[d]
    }

    pub fn leaves(&self) -> &[usize] {
        &self.levels[self.steps]
    }

    /// Incoming edges `(source, sign, weight)`; the weights are the
    /// conditional probabilities of the source given the node.
    pub fn incoming(&self, id: usize) -> &[(usize, i8, f64)] {
        &self.incoming[id]
    }

    /// Conditional expectation over the children of `id`.
    pub fn conditional_expectation<T: Combine>(&self, id: usize, values: &TreeField<T>) -> Result<T> {
        match self.nodes[id].children {
            Children::Binary { plus, minus } => Ok(T::mean(values.get(plus), values.get(minus))),
            Children::Single(c) => Ok(values.get(c).clone()),
            Children::Leaf => Err(Error::Structure(format!("node {id} is a leaf"))),
        }
    }

    /// Martingale increment coefficient over the children of `id`.
    pub fn martingale_at<T: Combine>(&self, id: usize, values: &TreeField<T>) -> Result<T> {
        match self.nodes[id].children {
            Children::Binary { plus, minus } => {
                Ok(T::martingale(values.get(plus), values.get(minus), self.dt))
            }
            Children::Single(c) => Ok(values.get(c).zero_like()),
            Children::Leaf => Err(Error::Structure(format!("node {id} is a leaf"))),
        }
    }

    /// Probability-weighted average of a scalar over depth `d`.
    pub fn expectation_at_depth(&self, d: usize, f: impl Fn(usize) -> f64) -> f64 {
        let mut s = crate::numerics::NeumaierSum::new();
        for &id in &self.levels[d] {
            s.add(self.nodes[id].prob * f(id));
        }
        s.total()
    }

    pub fn manifest(&self) -> TreeManifest {
        TreeManifest {
            k: self.steps,
            dt: self.dt,
            recombining: self.is_recombining(),
            nodes: self
                .nodes
                .iter()
                .map(|n| ManifestNode {
                    id: n.id,
                    depth: n.depth,
                    prob: n.prob,
                    parent: n.parent,
                    sign: n.sign,
                })
                .collect(),
        }
    }
}

/// JSON export of a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeManifest {
    #[serde(rename = "K")]
    pub k: usize,
    pub dt: f64,
    pub recombining: bool,
    pub nodes: Vec<ManifestNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestNode {
    pub id: usize,
    pub depth: usize,
    pub prob: f64,
    pub parent: Option<usize>,
    pub sign: i8,
}

/// Values that can be averaged over the two children of a node.
pub trait Combine: Clone {
    fn mean(plus: &Self, minus: &Self) -> Self;
    fn martingale(plus: &Self, minus: &Self, dt: f64) -> Self;
    fn zero_like(&self) -> Self;
}

impl Combine for f64 {
    fn mean(plus: &Self, minus: &Self) -> Self {
        0.5 * (plus + minus)
    }
    fn martingale(plus: &Self, minus: &Self, dt: f64) -> Self {
        (plus - minus) / (2.0 * dt.sqrt())
    }
    fn zero_like(&self) -> Self {
        0.0
    }
}

impl Combine for Field {
    fn mean(plus: &Self, minus: &Self) -> Self {
        plus.zip_map(minus, |a, b| 0.5 * (a + b))
    }
    fn martingale(plus: &Self, minus: &Self, dt: f64) -> Self {
        let s = 2.0 * dt.sqrt();
        plus.zip_map(minus, |a, b| (a - b) / s)
    }
    fn zero_like(&self) -> Self {
        Field::zeros(*self.grid())
    }
}

/// Mean of the two child values.
pub fn conditional_expectation<T: Combine>(plus: &T, minus: &T) -> T {
    T::mean(plus, minus)
}

/// `U = (u+ - u-) / (2 sqrt(dt))`, so that `child = mean +/- U sqrt(dt)`.
pub fn martingale_part<T: Combine>(plus: &T, minus: &T, dt: f64) -> T {
    T::martingale(plus, minus, dt)
}

/// One value per tree node, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeField<T> {
    data: Vec<T>,
}

impl<T: Clone> TreeField<T> {
    pub fn filled(tree: &ScenarioTree, value: T) -> Self {
        Self { data: vec![value; tree.len()] }
    }
}

impl<T> TreeField<T> {
    pub fn from_fn(tree: &ScenarioTree, f: impl FnMut(usize) -> T) -> Self {
        Self { data: (0..tree.len()).map(f).collect() }
    }

    pub fn from_vec(tree: &ScenarioTree, data: Vec<T>) -> Result<Self> {
        if data.len() != tree.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} node values for a tree with {} nodes",
                data.len(),
                tree.len()
            )));
        }
        Ok(Self { data })
    }

    pub(crate) fn from_vec_unchecked(data: Vec<T>) -> Self {
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, id: usize) -> &T {
        &self.data[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut T {
        &mut self.data[id]
    }

    pub fn set(&mut self, id: usize, v: T) {
        self.data[id] = v;
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn map<S>(&self, f: impl FnMut(&T) -> S) -> TreeField<S> {
        TreeField { data: self.data.iter().map(f).collect() }
    }
}

impl TreeField<Field> {
    /// Pointwise difference, node by node.
    pub fn difference(&self, other: &TreeField<Field>) -> TreeField<Field> {
        TreeField { data: self.data.iter().zip(&other.data).map(|(a, b)| a.sub(b)).collect() }
    }
}
