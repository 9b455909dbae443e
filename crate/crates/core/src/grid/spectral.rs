//! Discrete-Fourier derivatives and the FFT-diagonalized implicit diffusion
//! solve.
//!
//! Spectral derivatives treat the Nyquist mode as having wavenumber zero, so
//! every derivative symbol is a product of the same per-axis factors and the
//! discrete identity `sum_jk |p_jk|^2 = |lap p|^2` holds for every field.

use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Field, Grid};

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut p = planner().lock().unwrap_or_else(|e| e.into_inner());
    if forward {
        p.plan_fft_forward(len)
    } else {
        p.plan_fft_inverse(len)
    }
}

fn transform(grid: &Grid, data: &mut [Complex64], forward: bool) {
    let n = grid.points();
    let fft = plan(n, forward);
    // rows (axis 1 for n = 2, the only axis for n = 1)
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    if grid.dim() == 2 {
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = data[i * n + j];
            }
            fft.process(&mut col);
            for i in 0..n {
                data[i * n + j] = col[i];
            }
        }
    }
}

/// Forward DFT of a field, unnormalized.
pub fn forward(f: &Field) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(f.grid(), &mut data, true);
    data
}

/// Inverse DFT, normalized, real part.
pub fn inverse(grid: &Grid, mut data: Vec<Complex64>) -> Field {
    transform(grid, &mut data, false);
    let scale = 1.0 / grid.len() as f64;
    Field::from_raw(*grid, data.iter().map(|c| c.re * scale).collect())
}

/// Signed mode index of DFT bin `m` on `n` points.
pub fn mode(m: usize, n: usize) -> i64 {
    if m <= n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// Angular wavenumber of bin `m`, with the Nyquist bin mapped to zero.
pub fn wavenumber(grid: &Grid, m: usize) -> f64 {
    let n = grid.points();
    if m == n / 2 {
        return 0.0;
    }
    std::f64::consts::PI * mode(m, n) as f64 / grid.half_width()
}

fn axis_bins(grid: &Grid, flat: usize) -> [usize; 2] {
    grid.multi_index(flat)
}

fn apply_symbol(f: &Field, symbol: impl Fn([usize; 2]) -> Complex64) -> Field {
    let grid = *f.grid();
    let mut hat = forward(f);
    for (flat, c) in hat.iter_mut().enumerate() {
        *c *= symbol(axis_bins(&grid, flat));
    }
    inverse(&grid, hat)
}

/// Spectral `d f / d x_axis`.
pub fn partial(f: &Field, axis: usize) -> Field {
    let grid = *f.grid();
    apply_symbol(f, |b| Complex64::new(0.0, wavenumber(&grid, b[axis])))
}

/// Spectral `d^2 f / dx_j dx_k`.
pub fn second_partial(f: &Field, j: usize, k: usize) -> Field {
    let grid = *f.grid();
    apply_symbol(f, |b| Complex64::new(-wavenumber(&grid, b[j]) * wavenumber(&grid, b[k]), 0.0))
}

/// Spectral Laplacian.
pub fn laplacian(f: &Field) -> Field {
    let grid = *f.grid();
    let dim = grid.dim();
    apply_symbol(f, |b| {
        let s: f64 = (0..dim).map(|a| wavenumber(&grid, b[a]).powi(2)).sum();
        Complex64::new(-s, 0.0)
    })
}

/// Eigenvalue of the central `2n+1`-point Laplacian on bin `m` of one axis.
pub fn fd_laplacian_symbol(grid: &Grid, m: usize) -> f64 {
    let h = grid.spacing();
    let s = (std::f64::consts::PI * m as f64 / grid.points() as f64).sin();
    -4.0 / (h * h) * s * s
}

/// Solves `(I - c * lap_fd) x = b` exactly through the DFT diagonalization of
/// the central Laplacian. Requires `c >= 0`.
pub fn implicit_diffusion_solve(b: &Field, c: f64) -> Field {
    if c == 0.0 {
        return b.clone();
    }
    let grid = *b.grid();
    let dim = grid.dim();
    apply_symbol(b, |bins| {
        let s: f64 = (0..dim).map(|a| fd_laplacian_symbol(&grid, bins[a])).sum();
        Complex64::new(1.0 / (1.0 - c * s), 0.0)
    })
}

/// Periodic convolution `(k * f)(x) = h^n sum_y k(x - y) f(y)` where `kernel`
/// is sampled on displacements laid out on the same lattice, with the zero
/// displacement at the lattice origin index (wrap-around order).
pub fn periodic_convolution(kernel_wrapped: &Field, f: &Field) -> Field {
    let grid = *f.grid();
    let kh = forward(kernel_wrapped);
    let mut fh = forward(f);
    let vol = grid.cell_volume();
    for (a, b) in fh.iter_mut().zip(&kh) {
        *a *= *b * vol;
    }
    inverse(&grid, fh)
}
