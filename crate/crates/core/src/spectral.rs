//! Fourier transforms on periodic grids and the multipliers built on them.
//!
//! Conventions, fixed here and nowhere else:
//!
//! * forward transform is the unnormalized DFT `c_j = sum_i u_i exp(-i xi_j (x_i + L))`;
//! * the inverse carries the `1 / n^N` factor, so the trigonometric interpolant is
//!   `u(x) = n^{-N} sum_j c_j exp(i xi_j (x + L))`;
//! * `xi_j = pi j / L` with the Nyquist index read as `-n / 2`;
//! * by Parseval, `integral(u v) = h^N / n^N * sum_j c_j conj(d_j)`.
//!
//! Real fields are stored as half spectra: a real-to-complex transform along the
//! last axis followed by complex transforms along the others. The last axis then
//! holds `n / 2 + 1` entries, and entries `1 ..= n/2 - 1` stand for two modes each.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

struct Plans {
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Arc<Plans> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Plans>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
    map.entry(n)
        .or_insert_with(|| {
            let mut real = RealFftPlanner::<f64>::new();
            let mut cplx = FftPlanner::<f64>::new();
            Arc::new(Plans {
                r2c: real.plan_fft_forward(n),
                c2r: real.plan_fft_inverse(n),
                forward: cplx.plan_fft_forward(n),
                inverse: cplx.plan_fft_inverse(n),
            })
        })
        .clone()
}

/// Number of stored entries along the last axis.
pub fn half_len(n: usize) -> usize {
    n / 2 + 1
}

/// Half spectrum of a real field, unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpectrum {
    grid: GridSpec,
    data: Vec<Complex64>,
}

impl HalfSpectrum {
    /// Wraps half-spectrum data laid out as produced by [`forward`].
    pub(crate) fn from_parts(grid: GridSpec, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), grid.len() / grid.points_per_dim() * half_len(grid.points_per_dim()));
        Self { grid, data }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Multiplies every mode by a real symbol laid out like the half spectrum.
    pub fn multiply(&mut self, symbol: &[f64]) {
        debug_assert_eq!(symbol.len(), self.data.len());
        for (c, &m) in self.data.iter_mut().zip(symbol) {
            *c *= m;
        }
    }

    /// `sum_j w_j |c_j|^2 m_j` over all modes, expanding the half storage.
    pub fn weighted_energy(&self, symbol: Option<&[f64]>) -> f64 {
        let m = half_len(self.grid.points_per_dim());
        let mut total = 0.0;
        for (row_idx, row) in self.data.chunks_exact(m).enumerate() {
            for (j, c) in row.iter().enumerate() {
                let w = if j == 0 || j == m - 1 { 1.0 } else { 2.0 };
                let s = symbol.map_or(1.0, |sym| sym[row_idx * m + j]);
                total += w * s * c.norm_sqr();
            }
        }
        total
    }

    pub fn into_field(self) -> Field {
        inverse(self)
    }
}

/// Forward transform of a real field.
pub fn forward(u: &Field) -> HalfSpectrum {
    let grid = *u.grid();
    let n = grid.points_per_dim();
    let m = half_len(n);
    let rows = grid.len() / n;
    let p = plans(n);

    let mut data = vec![Complex64::new(0.0, 0.0); rows * m];
    let mut row_in = vec![0.0; n];
    let mut scratch = p.r2c.make_scratch_vec();
    for (src, dst) in u.values().chunks_exact(n).zip(data.chunks_exact_mut(m)) {
        row_in.copy_from_slice(src);
        p.r2c
            .process_with_scratch(&mut row_in, dst, &mut scratch)
            .expect("buffer sizes match the plan");
    }
    for axis in 0..grid.dim() - 1 {
        transform_axis(&mut data, &grid, axis, &p.forward);
    }
    HalfSpectrum { grid, data }
}

/// Inverse transform, including the `1 / n^N` normalization.
pub fn inverse(mut spec: HalfSpectrum) -> Field {
    let grid = spec.grid;
    let n = grid.points_per_dim();
    let m = half_len(n);
    let p = plans(n);
    for axis in 0..grid.dim() - 1 {
        transform_axis(&mut spec.data, &grid, axis, &p.inverse);
    }
    let scale = 1.0 / grid.len() as f64;
    let mut values = vec![0.0; grid.len()];
    let mut scratch = p.c2r.make_scratch_vec();
    let mut row = vec![Complex64::new(0.0, 0.0); m];
    for (src, dst) in spec.data.chunks_exact(m).zip(values.chunks_exact_mut(n)) {
        row.copy_from_slice(src);
        row[0].im = 0.0;
        row[m - 1].im = 0.0;
        p.c2r
            .process_with_scratch(&mut row, dst, &mut scratch)
            .expect("buffer sizes match the plan");
        dst.iter_mut().for_each(|v| *v *= scale);
    }
    Field::from_raw(grid, values)
}

/// Complex transform along a non-final axis of the half-spectrum array.
fn transform_axis(data: &mut [Complex64], grid: &GridSpec, axis: usize, fft: &Arc<dyn Fft<f64>>) {
    let n = grid.points_per_dim();
    let m = half_len(n);
    let dim = grid.dim();
    let inner = n.pow((dim - 2 - axis) as u32) * m;
    let block = n * inner;
    let mut buf = vec![Complex64::new(0.0, 0.0); block];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for chunk in data.chunks_exact_mut(block) {
        for i in 0..n {
            for t in 0..inner {
                buf[t * n + i] = chunk[i * inner + t];
            }
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for i in 0..n {
            for t in 0..inner {
                chunk[i * inner + t] = buf[t * n + i];
            }
        }
    }
}

/// Squared wavenumber magnitude laid out like the half spectrum.
pub fn xi_squared(grid: &GridSpec) -> Arc<Vec<f64>> {
    symbol(grid, 1.0, SymbolKind::Fractional)
}

/// Multiplier families used across the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SymbolKind {
    /// `|xi|^{2s}`
    Fractional,
    /// `1 / (1 + |xi|^{2s})`
    Resolvent,
    /// `1 + |xi|^{2s}`
    Operator,
    /// `(1 + |xi|^{2s})^{-1/2}`
    InvSqrtOperator,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct SymbolKey {
    dim: usize,
    n: usize,
    half_width: u64,
    s: u64,
    kind: SymbolKind,
}

const SYMBOL_CACHE_LIMIT: usize = 24;

/// Cached real symbol over the half spectrum.
pub fn symbol(grid: &GridSpec, s: f64, kind: SymbolKind) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<SymbolKey, Arc<Vec<f64>>>>> = OnceLock::new();
    let key = SymbolKey {
        dim: grid.dim(),
        n: grid.points_per_dim(),
        half_width: grid.half_width().to_bits(),
        s: s.to_bits(),
        kind,
    };
    let cache = CACHE.get_or_init(Default::default);
    if let Some(hit) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return hit.clone();
    }
    let built = Arc::new(build_symbol(grid, s, kind));
    let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
    if map.len() >= SYMBOL_CACHE_LIMIT {
        map.clear();
    }
    map.insert(key, built.clone());
    built
}

fn build_symbol(grid: &GridSpec, s: f64, kind: SymbolKind) -> Vec<f64> {
    let n = grid.points_per_dim();
    let m = half_len(n);
    let dim = grid.dim();
    let rows = grid.len() / n;
    let k: Vec<f64> = (0..n).map(|j| grid.wavenumber(j)).collect();
    let k_last: Vec<f64> = (0..m)
        .map(|j| std::f64::consts::PI * j as f64 / grid.half_width())
        .collect();
    let mut out = Vec::with_capacity(rows * m);
    let mut idx = vec![0usize; dim.saturating_sub(1)];
    for row in 0..rows {
        let mut rem = row;
        for slot in idx.iter_mut().rev() {
            *slot = rem % n;
            rem /= n;
        }
        let base: f64 = idx.iter().map(|&j| k[j] * k[j]).sum();
        for kl in &k_last {
            let xi2 = base + kl * kl;
            let frac = if xi2 == 0.0 {
                0.0
            } else if s == 1.0 {
                xi2
            } else {
                xi2.powf(s)
            };
            out.push(match kind {
                SymbolKind::Fractional => frac,
                SymbolKind::Resolvent => 1.0 / (1.0 + frac),
                SymbolKind::Operator => 1.0 + frac,
                SymbolKind::InvSqrtOperator => 1.0 / (1.0 + frac).sqrt(),
            });
        }
    }
    out
}

pub(crate) fn check_s(s: f64) -> Result<()> {
    if s > 0.0 && s <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("s must lie in (0, 1], got {s}")))
    }
}

/// Applies a precomputed half-spectrum symbol.
pub fn apply_symbol(u: &Field, sym: &[f64]) -> Field {
    let mut spec = forward(u);
    spec.multiply(sym);
    inverse(spec)
}

/// `(-Delta)^s u` as the multiplier `|xi|^{2s}`.
pub fn fractional_laplacian(u: &Field, s: f64) -> Result<Field> {
    check_s(s)?;
    Ok(apply_symbol(u, &symbol(u.grid(), s, SymbolKind::Fractional)))
}

/// `((-Delta)^s + 1)^{-1} u`
pub fn apply_resolvent(u: &Field, s: f64) -> Result<Field> {
    check_s(s)?;
    Ok(apply_symbol(u, &symbol(u.grid(), s, SymbolKind::Resolvent)))
}

/// `(-Delta)^s u + u`
pub fn apply_operator(u: &Field, s: f64) -> Result<Field> {
    check_s(s)?;
    Ok(apply_symbol(u, &symbol(u.grid(), s, SymbolKind::Operator)))
}

/// `<(-Delta)^s u, u>` computed on the spectral side.
pub fn gagliardo_norm_sq(u: &Field, s: f64) -> Result<f64> {
    check_s(s)?;
    let grid = *u.grid();
    let spec = forward(u);
    let sym = symbol(&grid, s, SymbolKind::Fractional);
    Ok(parseval_scale(&grid) * spec.weighted_energy(Some(&sym)))
}

/// `<u, u>_s + integral(u^2)`, the square of the norm used for corrections.
pub fn sobolev_norm_sq(u: &Field, s: f64) -> Result<f64> {
    check_s(s)?;
    let grid = *u.grid();
    let spec = forward(u);
    let sym = symbol(&grid, s, SymbolKind::Operator);
    Ok(parseval_scale(&grid) * spec.weighted_energy(Some(&sym)))
}

pub(crate) fn parseval_scale(grid: &GridSpec) -> f64 {
    grid.cell_volume() / grid.len() as f64
}

/// Spectral derivative along `axis` (0-based). The Nyquist mode is dropped.
pub fn derivative(u: &Field, axis: usize) -> Result<Field> {
    let grid = *u.grid();
    if axis >= grid.dim() {
        return Err(Error::InvalidParameter(format!(
            "axis {axis} out of range for dimension {}",
            grid.dim()
        )));
    }
    let n = grid.points_per_dim();
    let m = half_len(n);
    let dim = grid.dim();
    let mut spec = forward(u);
    let last = axis == dim - 1;
    let stride_rows = if last { 0 } else { n.pow((dim - 2 - axis) as u32) };
    for (row, chunk) in spec.data.chunks_exact_mut(m).enumerate() {
        if last {
            for (j, c) in chunk.iter_mut().enumerate() {
                let xi = if j == n / 2 {
                    0.0
                } else {
                    std::f64::consts::PI * j as f64 / grid.half_width()
                };
                *c *= Complex64::new(0.0, xi);
            }
        } else {
            let j = (row / stride_rows) % n;
            let xi = if j == n / 2 { 0.0 } else { grid.wavenumber(j) };
            let f = Complex64::new(0.0, xi);
            chunk.iter_mut().for_each(|c| *c *= f);
        }
    }
    Ok(inverse(spec))
}

/// Spectral interpolation onto a finer or coarser grid over the same box.
pub fn resample(u: &Field, points_per_dim: usize) -> Result<Field> {
    let src = *u.grid();
    let dst = GridSpec::new(src.dim(), src.half_width(), points_per_dim)?;
    if dst == src {
        return Ok(u.clone());
    }
    let full = u.to_spectral();
    let (n0, n1) = (src.points_per_dim() as i64, points_per_dim as i64);
    let keep = n0.min(n1) / 2;
    let dim = src.dim();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); dst.len()];
    let mut idx = vec![0usize; dim];
    let ratio = dst.len() as f64 / src.len() as f64;
    'outer: for (flat, c) in full.coefficients.iter().enumerate() {
        src.unravel(flat, &mut idx);
        let mut dflat = 0usize;
        for &i in &idx {
            let j = src.signed_index(i);
            if j.abs() >= keep {
                continue 'outer;
            }
            let jd = if j < 0 { j + n1 } else { j } as usize;
            dflat = dflat * points_per_dim + jd;
        }
        coeffs[dflat] += c * ratio;
    }
    let out = SpectralField { grid: dst, coefficients: coeffs };
    Ok(out.to_field_lossy())
}

/// Full complex spectrum of a real field.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub grid: GridSpec,
    pub coefficients: Vec<Complex64>,
}

impl Field {
    /// Full unnormalized spectrum, expanded from the half storage.
    pub fn to_spectral(&self) -> SpectralField {
        let grid = *self.grid();
        let half = forward(self);
        let n = grid.points_per_dim();
        let m = half_len(n);
        let dim = grid.dim();
        let mut coefficients = vec![Complex64::new(0.0, 0.0); grid.len()];
        let mut idx = vec![0usize; dim];
        for (flat, slot) in coefficients.iter_mut().enumerate() {
            grid.unravel(flat, &mut idx);
            let last = idx[dim - 1];
            if last < m {
                let hflat = flat / n * m + last;
                *slot = half.data[hflat];
            } else {
                // mirror through the origin: c(-j) = conj c(j)
                let mut mflat = 0usize;
                for (a, &i) in idx.iter().enumerate() {
                    let mi = (n - i) % n;
                    mflat = if a == dim - 1 { mflat * m + mi } else { mflat * n + mi };
                }
                *slot = half.data[mflat].conj();
            }
        }
        SpectralField { grid, coefficients }
    }
}

impl SpectralField {
    /// Largest `|c(-j) - conj c(j)|` relative to the largest coefficient.
    pub fn hermitian_defect(&self) -> f64 {
        let grid = self.grid;
        let n = grid.points_per_dim();
        let dim = grid.dim();
        let scale = self.coefficients.iter().fold(0.0f64, |a, c| a.max(c.norm()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut idx = vec![0usize; dim];
        let mut worst = 0.0f64;
        for (flat, c) in self.coefficients.iter().enumerate() {
            grid.unravel(flat, &mut idx);
            idx.iter_mut().for_each(|i| *i = (n - *i) % n);
            let mirror = self.coefficients[grid.ravel(&idx)];
            worst = worst.max((mirror - c.conj()).norm());
        }
        worst / scale
    }

    /// Inverse transform; fails if the coefficients are not Hermitian.
    pub fn to_field(&self) -> Result<Field> {
        let defect = self.hermitian_defect();
        if defect > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "spectrum is not Hermitian (defect {defect:.3e})"
            )));
        }
        Ok(self.to_field_lossy())
    }

    /// Inverse transform keeping the real part only.
    pub fn to_field_lossy(&self) -> Field {
        let grid = self.grid;
        let n = grid.points_per_dim();
        let m = half_len(n);
        let mut data = Vec::with_capacity(grid.len() / n * m);
        for row in self.coefficients.chunks_exact(n) {
            data.extend_from_slice(&row[..m]);
        }
        // The half storage drops the mirrored modes; symmetrize the stored
        // ones so the real part of the full inverse is reproduced.
        let mut half = HalfSpectrum { grid, data };
        hermitian_fold(&mut half, &self.coefficients);
        inverse(half)
    }
}

/// Replaces each stored mode by the average of itself and the conjugate of its
/// mirror, which is what the real part of the full inverse sees.
fn hermitian_fold(half: &mut HalfSpectrum, full: &[Complex64]) {
    let grid = half.grid;
    let n = grid.points_per_dim();
    let m = half_len(n);
    let dim = grid.dim();
    let mut idx = vec![0usize; dim];
    for (hflat, c) in half.data.iter_mut().enumerate() {
        let row = hflat / m;
        let last = hflat % m;
        let flat = row * n + last;
        grid.unravel(flat, &mut idx);
        idx.iter_mut().for_each(|i| *i = (n - *i) % n);
        let mirror = full[grid.ravel(&idx)];
        *c = 0.5 * (*c + mirror.conj());
    }
}

/// Evaluates the trigonometric interpolant of a field at arbitrary points.
#[derive(Debug, Clone)]
pub struct TrigInterpolant {
    grid: GridSpec,
    half: Vec<Complex64>,
}

impl TrigInterpolant {
    pub fn new(u: &Field) -> Self {
        let grid = *u.grid();
        let mut half = forward(u).data;
        let scale = 1.0 / grid.len() as f64;
        let m = half_len(grid.points_per_dim());
        for (i, c) in half.iter_mut().enumerate() {
            let j = i % m;
            let w = if j == 0 || j == m - 1 { 1.0 } else { 2.0 };
            *c *= w * scale;
        }
        Self { grid, half }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let grid = &self.grid;
        let n = grid.points_per_dim();
        let m = half_len(n);
        let dim = grid.dim();
        assert_eq!(x.len(), dim, "point dimension mismatch");
        let l = grid.half_width();
        let phase = |xi: f64, xa: f64| Complex64::from_polar(1.0, xi * (xa + l));
        // contract the last axis first, then the rest one by one
        let e_last: Vec<Complex64> = (0..m)
            .map(|j| phase(std::f64::consts::PI * j as f64 / l, x[dim - 1]))
            .collect();
        let mut cur: Vec<Complex64> = self
            .half
            .chunks_exact(m)
            .map(|row| row.iter().zip(&e_last).map(|(c, e)| c * e).sum())
            .collect();
        for axis in (0..dim - 1).rev() {
            let e: Vec<Complex64> = (0..n).map(|j| phase(grid.wavenumber(j), x[axis])).collect();
            cur = cur
                .chunks_exact(n)
                .map(|row| row.iter().zip(&e).map(|(c, e)| c * e).sum())
                .collect();
        }
        cur[0].re
    }
}

/// One-dimensional trigonometric interpolant of the grid row along the first
/// axis through the origin.
#[derive(Debug, Clone)]
pub struct AxisLine {
    half_width: f64,
    n: usize,
    coeffs: Vec<Complex64>,
}

impl AxisLine {
    pub fn new(u: &Field) -> Self {
        let grid = *u.grid();
        let n = grid.points_per_dim();
        let dim = grid.dim();
        let mut idx = vec![n / 2; dim];
        let row: Vec<f64> = (0..n)
            .map(|i| {
                idx[0] = i;
                u.values()[grid.ravel(&idx)]
            })
            .collect();
        let line_grid = GridSpec::new(1, grid.half_width(), n).expect("valid row grid");
        let spec = forward(&Field::from_raw(line_grid, row));
        let m = half_len(n);
        let coeffs = spec
            .data
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let w = if j == 0 || j == m - 1 { 1.0 } else { 2.0 };
                c * (w / n as f64)
            })
            .collect();
        Self { half_width: grid.half_width(), n, coeffs }
    }

    fn sum(&self, x: f64, order: u32) -> f64 {
        let l = self.half_width;
        let step = Complex64::from_polar(1.0, std::f64::consts::PI * (x + l) / l);
        let mut e = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, c) in self.coeffs.iter().enumerate() {
            let xi = std::f64::consts::PI * j as f64 / l;
            let term = match order {
                0 => c * e,
                _ if j == self.n / 2 => Complex64::new(0.0, 0.0),
                _ => c * e * Complex64::new(0.0, xi),
            };
            acc += term;
            e *= step;
            if j % 64 == 63 {
                // refresh the running phase to keep rounding bounded
                e = Complex64::from_polar(1.0, xi_next(j, l) * (x + l));
            }
        }
        acc.re
    }

    pub fn value(&self, x: f64) -> f64 {
        self.sum(x, 0)
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.sum(x, 1)
    }
}

fn xi_next(j: usize, l: f64) -> f64 {
    std::f64::consts::PI * (j + 1) as f64 / l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn smooth_random(grid: GridSpec, seed: u64) -> Field {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let terms: Vec<(Vec<f64>, f64, f64)> = (0..6)
            .map(|_| {
                let c: Vec<f64> = (0..grid.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (c, rng.gen_range(0.3..1.5), rng.gen_range(-1.0..1.0))
            })
            .collect();
        Field::from_fn(grid, |x| {
            terms
                .iter()
                .map(|(c, w, a)| {
                    let r2: f64 = x.iter().zip(c).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
                    a * (-r2 / (w * w)).exp()
                })
                .sum()
        })
    }

    #[test]
    fn round_trip_is_identity() {
        for (dim, n) in [(1, 64), (2, 32), (3, 16)] {
            let g = make_grid(dim, 5.0, n).unwrap();
            let u = smooth_random(g, 7);
            let back = inverse(forward(&u));
            for (a, b) in u.values().iter().zip(back.values()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn cosine_eigenfunction() {
        let g = make_grid(1, PI, 16).unwrap();
        let u = Field::from_fn(g, |x| (3.0 * x[0]).cos());
        let v = fractional_laplacian(&u, 0.5).unwrap();
        for (a, b) in u.values().iter().zip(v.values()) {
            assert!((3.0 * a - b).abs() < 1e-13);
        }
        let r = apply_resolvent(&u, 0.5).unwrap();
        for (a, b) in u.values().iter().zip(r.values()) {
            assert!((a / 4.0 - b).abs() < 1e-14);
        }
        assert_relative_eq!(gagliardo_norm_sq(&u, 0.5).unwrap(), 3.0 * PI, max_relative = 1e-13);
    }

    #[test]
    fn constants() {
        let g = make_grid(2, 3.0, 16).unwrap();
        let u = Field::constant(g, 2.5);
        assert!(fractional_laplacian(&u, 0.3).unwrap().max_abs() < 1e-14);
        let r = apply_resolvent(&u, 0.3).unwrap();
        assert!(r.values().iter().all(|v| (v - 2.5).abs() < 1e-14));
        assert_eq!(gagliardo_norm_sq(&Field::zeros(g), 0.4).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_s() {
        let g = make_grid(1, 1.0, 8).unwrap();
        let u = Field::zeros(g);
        assert!(fractional_laplacian(&u, 0.0).is_err());
        assert!(fractional_laplacian(&u, 1.2).is_err());
        assert!(apply_resolvent(&u, -0.1).is_err());
    }

    #[test]
    fn half_laplacian_of_lorentzian() {
        // (-Delta)^{1/2} of 2/(1+x^2) is 2(1-x^2)/(1+x^2)^2
        let g = make_grid(1, 400.0, 16384).unwrap();
        let u = Field::from_fn(g, |x| 2.0 / (1.0 + x[0] * x[0]));
        let v = fractional_laplacian(&u, 0.5).unwrap();
        let mut worst = 0.0f64;
        for i in 0..g.points_per_dim() {
            let x = g.coordinate(i);
            if x.abs() <= 20.0 {
                let exact = 2.0 * (1.0 - x * x) / (1.0 + x * x).powi(2);
                worst = worst.max((v.values()[i] - exact).abs());
            }
        }
        assert!(worst < 2e-4, "worst {worst}");
    }

    #[test]
    fn parseval_matches_physical_pairing() {
        let g = make_grid(2, 6.0, 48).unwrap();
        for seed in 0..4 {
            let u = smooth_random(g, seed);
            let a = gagliardo_norm_sq(&u, 0.37).unwrap();
            let b = fractional_laplacian(&u, 0.37).unwrap().dot(&u);
            assert_relative_eq!(a, b, max_relative = 1e-10);
            let c = sobolev_norm_sq(&u, 0.37).unwrap();
            assert_relative_eq!(c, a + u.dot(&u), max_relative = 1e-10);
        }
    }

    #[test]
    fn spectral_derivative_of_gaussian() {
        let g = make_grid(2, 10.0, 128).unwrap();
        let u = Field::from_fn(g, |x| (-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp());
        let d1 = derivative(&u, 1).unwrap();
        let exact = Field::from_fn(g, |x| -4.0 * x[1] * (-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp());
        assert!(d1.sub(&exact).max_abs() < 1e-10);
        assert!(derivative(&u, 2).is_err());
    }

    #[test]
    fn full_spectrum_is_hermitian_and_inverts() {
        let g = make_grid(2, 4.0, 16).unwrap();
        let u = smooth_random(g, 3);
        let sf = u.to_spectral();
        assert!(sf.hermitian_defect() < 1e-12);
        let back = sf.to_field().unwrap();
        assert!(back.sub(&u).max_abs() < 1e-13);
        let mut bad = sf.clone();
        bad.coefficients[1] += Complex64::new(0.0, 1.0);
        assert!(bad.to_field().is_err());
    }

    #[test]
    fn interpolants_agree_with_the_generating_function() {
        let g = make_grid(2, 12.0, 96).unwrap();
        let f = |x: &[f64]| (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp();
        let u = Field::from_fn(g, |x| f(x));
        let t = TrigInterpolant::new(&u);
        for p in [[0.13, -0.71], [1.5, 2.25], [-3.3, 0.4]] {
            assert!((t.eval(&p) - f(&p)).abs() < 1e-12);
        }
        let line = AxisLine::new(&u);
        for x in [0.0, 0.377, 1.91, 4.2] {
            assert!((line.value(x) - f(&[x, 0.0])).abs() < 1e-12);
            assert!((line.slope(x) + x * f(&[x, 0.0])).abs() < 1e-11);
        }
    }

    #[test]
    fn resampling_preserves_band_limited_fields() {
        let g = make_grid(2, 11.0, 64).unwrap();
        let u = Field::from_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1]) / 3.0).exp());
        let fine = resample(&u, 96).unwrap();
        let exact = Field::from_fn(*fine.grid(), |x| (-(x[0] * x[0] + x[1] * x[1]) / 3.0).exp());
        assert!(fine.sub(&exact).max_abs() < 1e-12, "{}", fine.sub(&exact).max_abs());
        let back = resample(&fine, 64).unwrap();
        assert!(back.sub(&u).max_abs() < 1e-12);
    }
}
