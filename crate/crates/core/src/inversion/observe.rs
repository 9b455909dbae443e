//! Observation operator: terminal density on `G = (0, 1) x box'` and the six
//! lateral Cauchy traces on the faces `x1 = 0` and `x1 = 1`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::InversionProblem;
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::numerics::NeumaierSum;
use crate::solver::MfgSolution;
use crate::tree::ScenarioTree;

/// Component order inside a face block.
pub const TRACE_NAMES: [&str; 6] = ["rho", "u", "rho_x1", "u_x1", "rho_x1x1", "u_x1x1"];

/// Which state a trace component reads, and its stencil order in `x1`.
pub(crate) fn component(c: usize) -> (bool, usize) {
    (c % 2 == 0, c / 2)
}

/// Traces at one tree node, laid out `[face][component][transverse]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTraces {
    pub node: usize,
    pub depth: usize,
    pub values: Vec<f64>,
}

/// The six traces on both faces at every node of the tree; each depth slice
/// is a `2 x transverse` block per component, so the expectation over a
/// depth has shape `2 faces x (K + 1) x transverse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyTraceSet {
    pub faces: [f64; 2],
    pub transverse: usize,
    pub nodes: Vec<NodeTraces>,
}

impl CauchyTraceSet {
    #[inline]
    pub fn offset(&self, face: usize, comp: usize, j: usize) -> usize {
        (face * 6 + comp) * self.transverse + j
    }

    pub fn at(&self, node: usize, face: usize, comp: usize, j: usize) -> f64 {
        self.nodes[node].values[self.offset(face, comp, j)]
    }

    /// Probability-weighted mean per depth: `[face][depth][transverse]`.
    pub fn depth_mean(&self, tree: &ScenarioTree, comp: usize) -> Vec<Vec<Vec<f64>>> {
        (0..2)
            .map(|f| {
                (0..=tree.steps())
                    .map(|d| {
                        (0..self.transverse)
                            .map(|j| tree.expectation_at_depth(d, |id| self.at(id, f, comp, j)))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Normalization of every observed component by its RMS in the generating run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationScales {
    pub terminal: f64,
    pub traces: [f64; 6],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Noise standard deviation relative to the component RMS.
    pub level: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { level: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    /// `rho(T)` at every leaf, in tree leaf order.
    pub terminal: Vec<Field>,
    pub traces: CauchyTraceSet,
    pub scales: ObservationScales,
    pub noise: NoiseSpec,
    /// `20 log10(signal RMS / noise RMS)` over all observed values; infinite
    /// without noise.
    pub snr_db: f64,
}

/// Trace values `[face][component][transverse]` of one node state.
pub(crate) fn node_traces(ip: &InversionProblem, rho: &Field, u: &Field) -> Vec<f64> {
    let nt = ip.transverse();
    let mut out = vec![0.0; 12 * nt];
    for f in 0..2 {
        for c in 0..6 {
            let (is_rho, order) = component(c);
            let v = if is_rho { rho.values() } else { u.values() };
            for j in 0..nt {
                let (idx, coef) = ip.stencil(f, j, order);
                out[(f * 6 + c) * nt + j] = idx.iter().zip(coef.iter()).map(|(&i, &w)| w * v[i]).sum();
            }
        }
    }
    out
}

/// Extracts the observations of a solution without noise.
pub fn observe(ip: &InversionProblem, sol: &MfgSolution) -> Observations {
    let tree = &ip.base.tree;
    let terminal: Vec<Field> = tree.leaves().iter().map(|&l| sol.rho.get(l).clone()).collect();
    let nodes: Vec<NodeTraces> = (0..tree.len())
        .map(|id| NodeTraces {
            node: id,
            depth: tree.node(id).depth,
            values: node_traces(ip, sol.rho.get(id), sol.u.get(id)),
        })
        .collect();
    let traces = CauchyTraceSet { faces: [0.0, 1.0], transverse: ip.transverse(), nodes };
    let mut obs = Observations {
        terminal,
        traces,
        scales: ObservationScales { terminal: 1.0, traces: [1.0; 6] },
        noise: NoiseSpec::default(),
        snr_db: f64::INFINITY,
    };
    obs.scales = rms_scales(ip, &obs);
    obs
}

fn rms_or_one(sum_sq: f64, weight: f64) -> f64 {
    let r = (sum_sq / weight).sqrt();
    if r > 1e-14 && r.is_finite() {
        r
    } else {
        1.0
    }
}

// weighted RMS with the same weights the misfit uses
fn rms_scales(ip: &InversionProblem, obs: &Observations) -> ObservationScales {
    let tree = &ip.base.tree;
    let wg = ip.region_weights();
    let (mut s, mut w) = (NeumaierSum::new(), NeumaierSum::new());
    for (l, &leaf) in tree.leaves().iter().enumerate() {
        let p = tree.node(leaf).prob;
        for (i, v) in obs.terminal[l].values().iter().enumerate() {
            s.add(p * wg[i] * v * v);
            w.add(p * wg[i]);
        }
    }
    let terminal = rms_or_one(s.total(), w.total());
    let mut traces = [1.0; 6];
    for (c, t) in traces.iter_mut().enumerate() {
        let (mut s, mut w) = (NeumaierSum::new(), NeumaierSum::new());
        for n in &obs.traces.nodes {
            let tw = ip.trace_time_weight(n.depth) * tree.node(n.node).prob;
            for f in 0..2 {
                for j in 0..obs.traces.transverse {
                    let v = obs.traces.at(n.node, f, c, j);
                    s.add(tw * ip.transverse_weight() * v * v);
                    w.add(tw * ip.transverse_weight());
                }
            }
        }
        *t = rms_or_one(s.total(), w.total());
    }
    ObservationScales { terminal, traces }
}

/// Adds independent Gaussian noise of standard deviation `level * RMS` to
/// every observed value, drawn from a ChaCha8 stream seeded by `spec.seed`.
pub fn add_noise(ip: &InversionProblem, obs: &Observations, spec: NoiseSpec) -> Result<Observations> {
    if !(spec.level >= 0.0 && spec.level.is_finite()) {
        return Err(Error::Config(format!("noise level {} must be nonnegative", spec.level)));
    }
    let mut out = obs.clone();
    out.noise = spec;
    if spec.level == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut sig, mut noi) = (NeumaierSum::new(), NeumaierSum::new());
    let tree = &ip.base.tree;
    let wg = ip.region_weights();
    let st = obs.scales.terminal;
    for (l, f) in out.terminal.iter_mut().enumerate() {
        let p = tree.node(tree.leaves()[l]).prob;
        for (i, v) in f.values_mut().iter_mut().enumerate() {
            if wg[i] > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                let e = spec.level * st * z;
                let w = p * wg[i] / (st * st);
                sig.add(w * *v * *v);
                noi.add(w * e * e);
                *v += e;
            }
        }
    }
    let nt = out.traces.transverse;
    for n in out.traces.nodes.iter_mut() {
        let tw = ip.trace_time_weight(n.depth) * tree.node(n.node).prob * ip.transverse_weight();
        for f in 0..2 {
            for c in 0..6 {
                let s = obs.scales.traces[c];
                for j in 0..nt {
                    let k = (f * 6 + c) * nt + j;
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let e = spec.level * s * z;
                    let w = tw / (s * s);
                    sig.add(w * n.values[k] * n.values[k]);
                    noi.add(w * e * e);
                    n.values[k] += e;
                }
            }
        }
    }
    out.snr_db = 10.0 * (sig.total() / noi.total()).log10();
    Ok(out)
}
