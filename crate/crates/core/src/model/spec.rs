//! Declarative problem descriptions and the shipped desk-scale presets.

use serde::{Deserialize, Serialize};

use super::{gaussian_density, Coupling, Hamiltonian, Kernel, MfgProblem, SourceTerm};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::tree::{ScenarioTree, TreeKind};

/// Terminal cost `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalSpec {
    Zero,
    /// `amp cos(pi mode x1 / L)`.
    Cosine { amp: f64, mode: usize },
    /// `amp exp(-|x - c|^2 / 2 w^2)`.
    Bump { amp: f64, center: [f64; 2], width: f64 },
}

/// Initial density `rho0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Gaussian { center: [f64; 2], sigma: f64 },
    /// `floor / |box| + (1 - floor) gaussian`.
    Floored { floor: f64, center: [f64; 2], sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub dim: usize,
    pub half_width: f64,
    pub points: usize,
    pub horizon: f64,
    pub steps: usize,
    pub tree: TreeKind,
    pub beta: f64,
    pub hamiltonian: Hamiltonian,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default)]
    pub source: SourceTerm,
    pub terminal: TerminalSpec,
    pub initial: InitialSpec,
}

impl ProblemSpec {
    /// Shipped models: `coupled`, `affine`, `decoupled`, `bounded`.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            dim: 1,
            half_width: 2.0,
            points: 64,
            horizon: 1.0,
            steps: 32,
            tree: TreeKind::Recombining,
            beta: 0.5,
            hamiltonian: Hamiltonian::Quadratic,
            kernel: Kernel::from_id("gaussian")?,
            coupling: Coupling::Linear { c1: 0.1, c2: 0.05 },
            source: SourceTerm::default(),
            terminal: TerminalSpec::Cosine { amp: 0.3, mode: 1 },
            initial: InitialSpec::Floored { floor: 0.2, center: [0.0; 2], sigma: 0.4 },
        };
        match name {
            "coupled" => Ok(base),
            "affine" => Ok(Self {
                hamiltonian: Hamiltonian::from_id("affine")?,
                kernel: Kernel::None,
                coupling: Coupling::Zero,
                ..base
            }),
            "decoupled" => Ok(Self { hamiltonian: Hamiltonian::Zero, kernel: Kernel::None, coupling: Coupling::Zero, ..base }),
            "bounded" => Ok(Self { hamiltonian: Hamiltonian::from_id("bounded")?, ..base }),
            other => Err(Error::Config(format!("unknown model preset '{other}'"))),
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.half_width, self.points, self.horizon, self.steps)
    }

    /// Same model on a grid with `points` and `steps` replaced.
    pub fn with_resolution(&self, points: usize, steps: usize) -> Self {
        Self { points, steps, ..self.clone() }
    }

    pub fn build(&self) -> Result<MfgProblem> {
        let grid = self.grid()?;
        let tree = ScenarioTree::new(self.steps, grid.dt(), self.tree)?;
        let l = grid.half_width();
        let h = match &self.terminal {
            TerminalSpec::Zero => Field::zeros(grid),
            TerminalSpec::Cosine { amp, mode } => {
                let k = std::f64::consts::PI * *mode as f64 / l;
                Field::from_fn(grid, |x| amp * (k * x[0]).cos())
            }
            TerminalSpec::Bump { amp, center, width } => Field::from_fn(grid, |x| {
                let r2 = (x[0] - center[0]).powi(2) + if grid.dim() == 2 { (x[1] - center[1]).powi(2) } else { 0.0 };
                amp * (-r2 / (2.0 * width * width)).exp()
            }),
        };
        let rho0 = match &self.initial {
            InitialSpec::Gaussian { center, sigma } => gaussian_density(grid, *center, *sigma),
            InitialSpec::Floored { floor, center, sigma } => {
                if !(0.0..=1.0).contains(floor) {
                    return Err(Error::Config(format!("density floor {floor} outside [0, 1]")));
                }
                let g = gaussian_density(grid, *center, *sigma);
                g.map(|v| floor / grid.box_volume() + (1.0 - floor) * v)
            }
        };
        MfgProblem::new(
            grid,
            tree,
            self.hamiltonian.clone(),
            self.kernel.clone(),
            self.coupling.clone(),
            self.source.clone(),
            self.beta,
            h,
            rho0,
        )
    }
}
