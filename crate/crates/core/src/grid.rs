//! Periodic uniform grids and the real-valued fields sampled on them.
//!
//! The box is `[-L, L)^N` with `n` points per axis, stored row-major with the
//! last axis fastest. Sample `i` along an axis sits at `x_i = -L + i h`,
//! `h = 2L / n`, so the origin is the index `n / 2` on every axis.
//!
//! Transform bookkeeping lives in [`crate::spectral`]; everything here is
//! physical-space only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of grid points accepted for a single field.
const MAX_POINTS: usize = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    half_width: f64,
    points_per_dim: usize,
}

impl GridSpec {
    pub fn new(dim: usize, half_width: f64, points_per_dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGrid("dimension must be at least 1".into()));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        if points_per_dim < 8 || points_per_dim % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per dimension must be even and at least 8, got {points_per_dim}"
            )));
        }
        let total = u32::try_from(dim)
            .ok()
            .and_then(|d| points_per_dim.checked_pow(d))
            .filter(|&t| t <= MAX_POINTS)
            .ok_or_else(|| {
                Error::InvalidGrid(format!("{points_per_dim}^{dim} points is too many"))
            })?;
        debug_assert!(total > 0);
        Ok(Self { dim, half_width, points_per_dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_dim(&self) -> usize {
        self.points_per_dim
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points_per_dim as f64
    }

    /// Total number of samples, `n^N`.
    pub fn len(&self) -> usize {
        self.points_per_dim.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn box_volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.dim as i32)
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Signed lattice index for position `j` in FFT order. The Nyquist index
    /// `n / 2` maps to `-n / 2`.
    pub fn signed_index(&self, j: usize) -> i64 {
        let n = self.points_per_dim as i64;
        let j = j as i64;
        if j < n / 2 {
            j
        } else {
            j - n
        }
    }

    /// Angular frequency `pi j / L` for FFT position `j`.
    pub fn wavenumber(&self, j: usize) -> f64 {
        std::f64::consts::PI * self.signed_index(j) as f64 / self.half_width
    }

    pub fn origin_index(&self) -> usize {
        let n = self.points_per_dim;
        (0..self.dim).fold(0, |acc, _| acc * n + n / 2)
    }

    /// Writes the per-axis indices of `flat` into `out`.
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        let n = self.points_per_dim;
        for slot in out.iter_mut().rev() {
            *slot = flat % n;
            flat /= n;
        }
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        let n = self.points_per_dim;
        idx.iter().fold(0, |acc, &i| acc * n + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.dim];
        self.unravel(flat, &mut idx);
        idx.iter().map(|&i| self.coordinate(i)).collect()
    }

    /// Same grid with the box doubled and the resolution density kept.
    pub fn doubled(&self) -> Result<Self> {
        Self::new(self.dim, 2.0 * self.half_width, 2 * self.points_per_dim)
    }
}

/// Builds a grid, validating the spacing invariants.
pub fn make_grid(dim: usize, half_width: f64, points_per_dim: usize) -> Result<GridSpec> {
    GridSpec::new(dim, half_width, points_per_dim)
}

/// Real samples on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { values: vec![0.0; grid.len()], grid }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self { values: vec![c; grid.len()], grid }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at index {bad}")));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let dim = grid.dim();
        let mut idx = vec![0usize; dim];
        let mut x = vec![0.0; dim];
        let values = (0..grid.len())
            .map(|flat| {
                grid.unravel(flat, &mut idx);
                for (xa, &ia) in x.iter_mut().zip(&idx) {
                    *xa = grid.coordinate(ia);
                }
                f(&x)
            })
            .collect();
        Self { grid, values }
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
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

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        Field::from_raw(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &Field) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
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

    /// Periodic rectangle rule, `h^N * sum(values)`.
    pub fn integrate(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    /// `L^2` inner product under the rectangle rule.
    pub fn dot(&self, other: &Field) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.grid.cell_volume() * dot_raw(&self.values, &other.values)
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Periodic integer shift: `out[i] = self[i - shift]` on every axis.
    pub fn roll(&self, shift: &[isize]) -> Field {
        let grid = self.grid;
        let n = grid.points_per_dim() as isize;
        let dim = grid.dim();
        assert_eq!(shift.len(), dim, "shift dimension mismatch");
        let mut idx = vec![0usize; dim];
        let mut out = vec![0.0; grid.len()];
        for (flat, &v) in self.values.iter().enumerate() {
            grid.unravel(flat, &mut idx);
            for (i, s) in idx.iter_mut().zip(shift) {
                *i = (*i as isize + s).rem_euclid(n) as usize;
            }
            out[grid.ravel(&idx)] = v;
        }
        Field::from_raw(grid, out)
    }

    /// Value at the origin sample.
    pub fn at_origin(&self) -> f64 {
        self.values[self.grid.origin_index()]
    }
}

/// Free-standing rectangle-rule quadrature.
pub fn integrate(u: &Field) -> f64 {
    u.integrate()
}

pub(crate) fn dot_raw(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the sum order fixed and vectorizable
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn spacing_from_arguments() {
        let g = make_grid(1, PI, 16).unwrap();
        assert_relative_eq!(g.spacing(), 2.0 * PI / 16.0);
        let g = make_grid(2, 100.0, 1024).unwrap();
        assert_relative_eq!(g.spacing(), 200.0 / 1024.0);
        assert_eq!(g.len(), 1024 * 1024);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(make_grid(2, 100.0, 15).is_err());
        assert!(make_grid(1, 1.0, 6).is_err());
        assert!(make_grid(1, 0.0, 16).is_err());
        assert!(make_grid(1, -2.0, 16).is_err());
        assert!(make_grid(0, 1.0, 16).is_err());
        assert!(make_grid(8, 1.0, 1 << 12).is_err());
    }

    #[test]
    fn frequency_lattice_puts_nyquist_negative() {
        let g = make_grid(1, PI, 8).unwrap();
        let ks: Vec<i64> = (0..8).map(|j| g.signed_index(j)).collect();
        assert_eq!(ks, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        assert_relative_eq!(g.wavenumber(3), 3.0);
    }

    #[test]
    fn origin_and_ravel() {
        let g = make_grid(3, 2.0, 8).unwrap();
        let o = g.origin_index();
        assert_eq!(g.point(o), vec![0.0, 0.0, 0.0]);
        let mut idx = [0; 3];
        g.unravel(123, &mut idx);
        assert_eq!(g.ravel(&idx), 123);
    }

    #[test]
    fn integrate_constant_and_odd() {
        let g = make_grid(2, 3.0, 16).unwrap();
        assert_relative_eq!(Field::constant(g, 1.0).integrate(), 36.0, max_relative = 1e-14);
        let odd = Field::from_fn(g, |x| (PI * x[0] / 3.0).sin() * (-x[1] * x[1]).exp());
        assert!(odd.integrate().abs() <= 1e-12 * 36.0);
    }

    #[test]
    fn gaussian_integral_is_spectrally_accurate() {
        let g = make_grid(1, 40.0, 4096).unwrap();
        let u = Field::from_fn(g, |x| (-x[0] * x[0]).exp());
        assert!((u.integrate() - PI.sqrt()).abs() <= 1e-10);
    }

    #[test]
    fn from_values_rejects_non_finite() {
        let g = make_grid(1, 1.0, 8).unwrap();
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(Field::from_values(g, v).is_err());
    }
}
