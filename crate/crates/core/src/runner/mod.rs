//! Experiment orchestration: JSON configuration, per-command pipelines,
//! atomic outputs with checksums, and the run manifest.

mod output;
mod pipelines;
mod selftest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use output::{read_field_stack, OutputFile, OutputSink};
pub use pipelines::{certify_bounded_constants, CertifySpec};
pub use selftest::{selftest_checks, CheckRecord};

use crate::carleman::{Domain, ForwardScheme, SearchBounds, SyntheticSpec, Theorem, TimeRule};
use crate::error::{Error, Result};
use crate::model::{Coupling, Hamiltonian, InitialSpec, Kernel, ProblemSpec, SourceProfile, SourceTerm, TerminalSpec};
use crate::solver::SolverConfig;
use crate::tree::{TreeKind, MAX_FULL_DEPTH};

/// Exit status of a schema or configuration violation.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status of a numerical failure.
pub const EXIT_NUMERICAL: i32 = 3;
/// Exit status of the capacity guard.
pub const EXIT_CAPACITY: i32 = 4;

/// Default memory guard in MiB.
pub const DEFAULT_MEMORY_LIMIT_MB: u64 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    VerifyCarleman,
    StabilityTwin,
    InvertSource,
    Selftest,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::VerifyCarleman => "verify-carleman",
            Command::StabilityTwin => "stability-twin",
            Command::InvertSource => "invert-source",
            Command::Selftest => "selftest",
        }
    }
}

/// Overrides of the preset grid; `n` is the dimension.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, rename = "L", skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, rename = "N", skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    /// `true` selects the recombining tree, `false` the full binary tree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recombining: Option<bool>,
    /// One node per depth, no common noise.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
    /// Must agree with `grid.K` when both are set.
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

/// A preset model with optional component overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<Hamiltonian>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Kernel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<Coupling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
}

fn default_preset() -> String {
    "coupled".into()
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            preset: default_preset(),
            hamiltonian: None,
            kernel: None,
            coupling: None,
            source: None,
            terminal: None,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateBlock {
    /// Depths whose nodes are written as snapshots; `[0, K]` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_depths: Option<Vec<usize>>,
    /// Explicit node ids, written in addition to the depths.
    pub snapshot_nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanBlock {
    pub theorem: Theorem,
    /// Number of random synthetic data.
    pub data: usize,
    pub lambdas: Vec<f64>,
    pub mus: Vec<f64>,
    /// Noise intensities; the model `beta` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    /// Template of every datum; the seed is derived per datum.
    pub synthetic: SyntheticSpec,
    /// `f3` of bounded backward data; [`crate::carleman::SHIPPED_F3`] when
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f3: Option<[f64; 2]>,
    pub rule: TimeRule,
    pub domain: Domain,
    pub forward_scheme: ForwardScheme,
    pub slack: f64,
    /// Replaces the sweep by a doubling search for `(lambda0, mu0)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchBounds>,
}

impl Default for CarlemanBlock {
    fn default() -> Self {
        Self {
            theorem: Theorem::Th1,
            data: 10,
            lambdas: vec![1.0, 2.0, 4.0],
            mus: vec![2.0, 4.0],
            betas: None,
            synthetic: SyntheticSpec::default(),
            f3: None,
            rule: TimeRule::default(),
            domain: Domain::default(),
            forward_scheme: ForwardScheme::default(),
            slack: 0.05,
            search: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityMode {
    #[default]
    Lipschitz,
    Holder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityBlock {
    pub mode: StabilityMode,
    /// Perturbation magnitudes of the Lipschitz experiment.
    pub deltas: Vec<f64>,
    /// Mode numbers of the perturbation family.
    pub modes: Vec<usize>,
    /// Initial size of the density modes of the Hölder family.
    pub level: f64,
    /// Start of the observation window; `T / 4` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Weight exponent of the predicted rate; certified by a bounded-domain
    /// doubling search when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
    /// Settings of that search.
    pub certify: CertifySpec,
}

impl Default for StabilityBlock {
    fn default() -> Self {
        Self {
            mode: StabilityMode::Lipschitz,
            deltas: vec![1e-1, 1e-2, 1e-3],
            modes: vec![1, 2],
            level: 0.05,
            epsilon: None,
            mu0: None,
            certify: CertifySpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionBlock {
    /// Fixed regularization; the discrepancy principle over `alphas` when
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub alphas: Vec<f64>,
    pub tau: f64,
    /// Relative noise level of the synthetic observations.
    pub noise: f64,
    /// Carleman weighting of the trace misfit; off when zero.
    pub weight_lambda: f64,
    pub weight_mu: f64,
    /// Cutoff `epsilon`; `T / 4` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    pub max_iters: u64,
    pub grad_tol: f64,
    /// Source factor generating the synthetic data.
    pub truth: SourceProfile,
    /// Runs a second reconstruction from a random guess and compares.
    pub certificate: bool,
    /// Half-width of the uniform random initial guess.
    pub init_scale: f64,
    /// Trace components in the misfit, ordered rho, u, rho_x1, u_x1,
    /// rho_x1x1, u_x1x1.
    pub trace_mask: [bool; 6],
}

impl Default for InversionBlock {
    fn default() -> Self {
        Self {
            alpha: None,
            alphas: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8],
            tau: 1.1,
            noise: 0.0,
            weight_lambda: 0.0,
            weight_mu: 1.0,
            eps: None,
            max_iters: 200,
            grad_tol: 1e-6,
            truth: SourceProfile::Smooth { amp: 0.5, omega: 2.0 * std::f64::consts::PI },
            certificate: true,
            init_scale: 0.5,
            trace_mask: [true; 6],
        }
    }
}

/// The JSON document driving one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// May be left out when the command line names it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub tree: TreeConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_limit_mb: Option<u64>,
    #[serde(default)]
    pub simulate: SimulateBlock,
    #[serde(default)]
    pub carleman: CarlemanBlock,
    #[serde(default)]
    pub stability: StabilityBlock,
    #[serde(default)]
    pub inversion: InversionBlock,
}

impl ExperimentConfig {
    /// Defaults for `command`.
    pub fn for_command(command: Command) -> Self {
        Self { command: Some(command), ..Self::default() }
    }

    /// Parses and schema-checks a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config schema: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn command(&self) -> Result<Command> {
        self.command.ok_or_else(|| Error::Config("no command given".into()))
    }

    /// The model description after applying every override.
    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let command = self.command()?;
        let mut spec = ProblemSpec::preset(&self.model.preset)?;
        let m = &self.model;
        if let Some(h) = &m.hamiltonian {
            spec.hamiltonian = h.clone();
        }
        if let Some(k) = &m.kernel {
            spec.kernel = k.clone();
        }
        if let Some(c) = &m.coupling {
            spec.coupling = c.clone();
        }
        if let Some(s) = &m.source {
            spec.source = s.clone();
        }
        if let Some(t) = &m.terminal {
            spec.terminal = t.clone();
        }
        if let Some(i) = &m.initial {
            spec.initial = i.clone();
        }
        // the bounded-domain data live on G = (0, 1) x box', which needs L = 1
        if command == Command::VerifyCarleman {
            spec.half_width = 1.0;
        }
        let g = &self.grid;
        if let Some(n) = g.n {
            spec.dim = n;
        }
        if let Some(l) = g.half_width {
            spec.half_width = l;
        }
        if let Some(n) = g.points {
            spec.points = n;
        }
        if let Some(t) = g.horizon {
            spec.horizon = t;
        }
        match (g.steps, self.tree.steps) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!("grid.K = {a} and tree.K = {b} differ")));
            }
            (Some(k), _) | (None, Some(k)) => spec.steps = k,
            (None, None) => {}
        }
        if let Some(b) = self.beta {
            spec.beta = b;
        }
        spec.tree = self.tree_kind().unwrap_or(spec.tree);
        Ok(spec)
    }

    /// Tree topology named by the config, if any.
    pub fn tree_kind(&self) -> Option<TreeKind> {
        if self.tree.degenerate {
            Some(TreeKind::Degenerate)
        } else {
            self.tree.recombining.map(|r| if r { TreeKind::Recombining } else { TreeKind::Full })
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        self.solver.unwrap_or_default()
    }

    pub fn memory_limit_bytes(&self) -> u64 {
        self.memory_limit_mb.unwrap_or(DEFAULT_MEMORY_LIMIT_MB).saturating_mul(1 << 20)
    }
}

/// Field arrays held per tree node by the solver and its diagnostics.
const FIELDS_PER_NODE: u64 = 6;

/// Number of nodes of a tree of depth `steps`.
pub fn tree_size(kind: TreeKind, steps: usize) -> u64 {
    let k = steps as u64;
    match kind {
        TreeKind::Full => (1u64 << (steps.min(62) + 1)) - 1,
        TreeKind::Recombining => (k + 1) * (k + 2) / 2,
        TreeKind::Degenerate => k + 1,
    }
}

/// Rejects runs whose tree size or field storage exceeds the guard.
pub fn capacity_guard(spec: &ProblemSpec, limit_bytes: u64) -> Result<u64> {
    if spec.tree == TreeKind::Full && spec.steps > MAX_FULL_DEPTH {
        return Err(Error::Capacity(format!(
            "non-recombining tree with K = {} exceeds the limit K <= {MAX_FULL_DEPTH}",
            spec.steps
        )));
    }
    let cells = (spec.points as u64).saturating_pow(spec.dim as u32);
    let bytes = tree_size(spec.tree, spec.steps).saturating_mul(cells).saturating_mul(8 * FIELDS_PER_NODE);
    if bytes > limit_bytes {
        return Err(Error::Capacity(format!(
            "estimated field storage {:.1} MiB for {} nodes of N^n = {cells} exceeds the guard of {:.1} MiB",
            bytes as f64 / (1u64 << 20) as f64,
            tree_size(spec.tree, spec.steps),
            limit_bytes as f64 / (1u64 << 20) as f64
        )));
    }
    Ok(bytes)
}

/// Independent 64-bit seed of stream `stream` under the run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Seed streams of the pipelines.
pub(crate) mod streams {
    pub const NOISE: u64 = 1;
    pub const GUESS: u64 = 2;
    pub const CERTIFY: u64 = 3;
    /// Carleman datum `i` uses stream `DATA + i`.
    pub const DATA: u64 = 1 << 32;
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Capacity(_) => EXIT_CAPACITY,
        Error::Config(_)
        | Error::Json(_)
        | Error::Model(_)
        | Error::InvalidGrid(_)
        | Error::Dimension(_)
        | Error::MuBelowMinimum { .. } => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
}

/// Record of one run; written to `manifest.json` in the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub status: RunStatus,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub wall_clock_seconds: f64,
    pub stages: Vec<StageTiming>,
    pub outputs: Vec<OutputFile>,
    /// Named pass/fail checks of the run.
    pub checks: Vec<CheckRecord>,
    /// Picard residuals of a `simulate` run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    pub summary: serde_json::Value,
}

impl RunManifest {
    /// The run finished and every recorded check passed.
    pub fn passed(&self) -> bool {
        self.status == RunStatus::Ok && self.checks.iter().all(|c| c.passed)
    }

    /// `path -> sha256` of every output, in write order.
    pub fn checksums(&self) -> Vec<(String, String)> {
        self.outputs.iter().map(|o| (o.path.clone(), o.sha256.clone())).collect()
    }
}

/// Mutable state of a running pipeline.
pub(crate) struct RunContext<'a> {
    pub config: &'a ExperimentConfig,
    pub sink: OutputSink,
    stages: Vec<StageTiming>,
    pub checks: Vec<CheckRecord>,
    pub residuals: Option<Vec<f64>>,
    pub converged: Option<bool>,
    pub summary: serde_json::Map<String, serde_json::Value>,
    stage_start: Option<(String, Instant)>,
}

impl<'a> RunContext<'a> {
    pub fn stage(&mut self, name: &str) {
        self.end_stage();
        self.stage_start = Some((name.to_string(), Instant::now()));
    }

    fn end_stage(&mut self) {
        if let Some((name, t)) = self.stage_start.take() {
            self.stages.push(StageTiming { name, seconds: t.elapsed().as_secs_f64() });
        }
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.summary.insert(key.to_string(), v);
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckRecord { name: name.to_string(), passed, detail });
    }
}

/// Output directory of a run: the config value or `runs/<command>-<seed>`.
pub fn output_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.clone().unwrap_or_else(|| {
        let c = config.command.map(|c| c.name()).unwrap_or("run");
        PathBuf::from(format!("runs/{c}-{}", config.seed))
    })
}

/// Runs the configured pipeline and writes `manifest.json`, also when the
/// pipeline fails. Returns the manifest; its `exit_code` is the process
/// status.
pub fn run(config: &ExperimentConfig) -> RunManifest {
    let started = Instant::now();
    let dir = output_dir(config);
    let mut ctx = RunContext {
        config,
        sink: OutputSink::new(dir.clone()),
        stages: Vec::new(),
        checks: Vec::new(),
        residuals: None,
        converged: None,
        summary: serde_json::Map::new(),
        stage_start: None,
    };
    let outcome = std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))
        .and_then(|_| pipelines::dispatch(&mut ctx));
    ctx.end_stage();
    // checks gate the exit status only for the self test; elsewhere they
    // are findings reported in the manifest
    let gating = config.command == Some(Command::Selftest);
    let (status, exit, failure) = match &outcome {
        Ok(()) if !gating || ctx.checks.iter().all(|c| c.passed) => (RunStatus::Ok, 0, None),
        Ok(()) => {
            let bad: Vec<&str> = ctx.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            (RunStatus::Failed, EXIT_NUMERICAL, Some(format!("failed checks: {}", bad.join(", "))))
        }
        Err(e) => (RunStatus::Failed, exit_code(e), Some(e.to_string())),
    };
    let manifest = RunManifest {
        artifact: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: config.command.map(|c| c.name().to_string()).unwrap_or_default(),
        seed: config.seed,
        config: config.clone(),
        status,
        exit_code: exit,
        failure,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        stages: ctx.stages,
        outputs: ctx.sink.files().to_vec(),
        checks: ctx.checks,
        residuals: ctx.residuals,
        converged: ctx.converged,
        summary: serde_json::Value::Object(ctx.summary),
    };
    if dir.is_dir() {
        if let Ok(bytes) = serde_json::to_vec_pretty(&manifest) {
            // a manifest that cannot be written leaves no partial file behind
            let _ = output::write_atomic(&dir.join("manifest.json"), &bytes);
        }
    }
    manifest
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests;
