//! Uniform periodic space-time lattices, field containers, discrete
//! differential operators and quadrature.
//!
//! The spatial box is `[-L, L)^n` with `N` points per axis; fields are stored
//! row-major with axis 0 (`x1`) slowest. Time runs over `[0, T]` in `K`
//! uniform steps.

mod norms;
mod ops;
pub mod snapshot;
pub mod spectral;

pub use norms::{expected_norm_at_depth, norms_difference, sobolev_norms, sobolev_norms_window, NormReport};
pub use ops::{
    divergence, gradient, integrate, inner, laplacian, mixed_second_identity_check, partial,
    second_partial, Backend,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic space-time lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    points: usize,
    horizon: f64,
    steps: usize,
    spacing: f64,
    dt: f64,
}

impl Grid {
    /// Builds a grid on `[-L, L)^n x [0, T]`.
    ///
    /// The stored half-width and horizon are re-derived from the spacing and
    /// the time step, so `h * N == 2L` and `dt * K == T` hold exactly for the
    /// stored values.
    pub fn new(dim: usize, half_width: f64, points: usize, horizon: f64, steps: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Dimension(format!("n = {dim}, expected 1 or 2")));
        }
        if points < 8 || points % 2 != 0 {
            return Err(Error::InvalidGrid(format!("N = {points} must be even and >= 8")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("L = {half_width} must be positive")));
        }
        if !(horizon.is_finite() && horizon > 0.0) || steps == 0 {
            return Err(Error::InvalidGrid(format!("T = {horizon}, K = {steps}")));
        }
        let spacing = 2.0 * half_width / points as f64;
        let dt = horizon / steps as f64;
        let half_width = spacing * points as f64 / 2.0;
        let horizon = dt * steps as f64;
        Ok(Self { dim, half_width, points, horizon, steps, spacing, dt })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Points per axis.
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Total number of spatial points, `N^n`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of one grid cell, `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn box_volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.dim as i32)
    }

    /// Coordinate of index `i` along any axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing
    }

    /// Index of the grid coordinate equal to `x`, if `x` is a grid point.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let r = (x + self.half_width) / self.spacing;
        let i = r.round();
        if (r - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < self.points {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Spatial point of a flat index; the second entry is 0 for `n = 1`.
    pub fn point(&self, flat: usize) -> [f64; 2] {
        if self.dim == 1 {
            [self.coord(flat), 0.0]
        } else {
            [self.coord(flat / self.points), self.coord(flat % self.points)]
        }
    }

    /// Axis indices of a flat index.
    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        if self.dim == 1 {
            [flat, 0]
        } else {
            [flat / self.points, flat % self.points]
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Same box and horizon with `N` and `K` doubled.
    pub fn refined(&self) -> Result<Self> {
        Self::new(self.dim, self.half_width, 2 * self.points, self.horizon, 2 * self.steps)
    }

    /// Same spatial lattice with a different time discretization.
    pub fn with_time(&self, horizon: f64, steps: usize) -> Result<Self> {
        Self::new(self.dim, self.half_width, self.points, horizon, steps)
    }

    /// Whether two grids describe the same spatial lattice.
    pub fn same_space(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.points == other.points && self.spacing == other.spacing
    }
}

/// One spatial slice of a scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    /// Samples `f(x)` at every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at index {i}")));
        }
        Ok(Self { grid, values })
    }

    /// Wraps values without the finiteness check; used on hot paths whose
    /// inputs are already validated.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same lattice.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.values.len(), other.values.len());
        Field::from_raw(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a * b)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Field) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    /// `a * wa + b * wb`.
    pub fn lincomb(a: &Field, wa: f64, b: &Field, wb: f64) -> Field {
        a.zip_map(b, |x, y| wa * x + wb * y)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete `L^2` norm over the box.
    pub fn l2_norm(&self) -> f64 {
        inner(self, self).max(0.0).sqrt()
    }
}

#[cfg(test)]
mod tests;
