//! Radial ground state of `(-Delta)^s U + U = U^p`.
//!
//! The solver is a Petviashvili iteration on the periodic grid. The radial
//! profile is read off the grid nodes along the first axis, with the periodic
//! images of the algebraic tail removed, and extended beyond the sampled range
//! by `c / r^{N+2s}`. Nodes are used instead of the trigonometric interpolant
//! because the slowly decaying spectrum leaves aliasing ripples between nodes
//! that swamp the far tail.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::interp::MonotoneCubic;
use crate::spectral::{self, AxisLine, SymbolKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub dim: usize,
    pub s: f64,
    pub p: f64,
}

impl ProblemParams {
    pub fn new(dim: usize, s: f64, p: f64) -> Result<Self> {
        let params = Self { dim, s, p };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::InvalidParameter(format!("s must lie in (0, 1), got {}", self.s)));
        }
        if !(self.p > 1.0 && self.p < self.critical_exponent()) {
            return Err(Error::InvalidParameter(format!(
                "p = {} must lie in (1, {})",
                self.p,
                self.critical_exponent()
            )));
        }
        Ok(())
    }

    /// `(N+2s)/(N-2s)` when `N > 2s`, otherwise infinity.
    pub fn critical_exponent(&self) -> f64 {
        let n = self.dim as f64;
        if n > 2.0 * self.s {
            (n + 2.0 * self.s) / (n - 2.0 * self.s)
        } else {
            f64::INFINITY
        }
    }

    /// Algebraic decay rate `N + 2s`.
    pub fn tail_exponent(&self) -> f64 {
        self.dim as f64 + 2.0 * self.s
    }
}

/// Monotone radial profile with an algebraic tail beyond the last sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub tail_coefficient: f64,
    pub tail_exponent: f64,
    interp: MonotoneCubic,
}

impl RadialProfile {
    pub fn new(
        radii: Vec<f64>,
        values: Vec<f64>,
        slopes: Option<Vec<f64>>,
        tail_coefficient: f64,
        tail_exponent: f64,
    ) -> Result<Self> {
        if radii.first() != Some(&0.0) {
            return Err(Error::InvalidParameter("profile radii must start at 0".into()));
        }
        check_decreasing(&radii, &values)?;
        if !(tail_coefficient > 0.0 && tail_exponent > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tail {tail_coefficient} / r^{tail_exponent} is not a positive decay law"
            )));
        }
        let last = radii.len() - 1;
        let handoff = tail_coefficient / radii[last].powf(tail_exponent);
        if (values[last] - handoff).abs() > 0.1 * values[last] {
            return Err(Error::InvalidParameter(format!(
                "tail law {handoff:.4e} disagrees with the last sample {:.4e}",
                values[last]
            )));
        }
        let interp = match &slopes {
            Some(d) => MonotoneCubic::with_slopes(radii.clone(), values.clone(), d.clone())?,
            None => MonotoneCubic::new(radii.clone(), values.clone())?,
        };
        let slopes = interp.slopes().to_vec();
        Ok(Self { radii, values, slopes, tail_coefficient, tail_exponent, interp })
    }

    pub fn max_radius(&self) -> f64 {
        self.radii[self.radii.len() - 1]
    }

    pub fn value(&self, r: f64) -> f64 {
        let r = r.abs();
        if r <= self.max_radius() {
            self.interp.eval(r)
        } else {
            self.tail_coefficient / r.powf(self.tail_exponent)
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        let r = r.abs();
        if r <= self.max_radius() {
            self.interp.derivative(r)
        } else {
            -self.tail_exponent * self.tail_coefficient / r.powf(self.tail_exponent + 1.0)
        }
    }
}

fn check_decreasing(radii: &[f64], values: &[f64]) -> Result<()> {
    if radii.len() != values.len() {
        return Err(Error::InvalidParameter("radii and values differ in length".into()));
    }
    if radii.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 1, got: radii.len() });
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("radii must be strictly increasing".into()));
    }
    for i in 1..values.len() {
        if !(values[i] < values[i - 1]) || values[i] <= 0.0 {
            return Err(Error::NotDecreasing { radius: radii[i] });
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub params: ProblemParams,
    pub profile: RadialProfile,
    pub mass_sq: f64,
    pub nonlinear_mass: f64,
    pub peak: f64,
    pub residual_norm: f64,
    pub tolerance: f64,
    pub iterations: usize,
    /// Grid solution the profile was read from.
    pub field: Field,
}

impl GroundState {
    /// `<U,U>_s + int U^2 - int U^{p+1}`, relative to `int U^{p+1}`.
    pub fn nehari_defect(&self) -> Result<f64> {
        let lhs = spectral::sobolev_norm_sq(&self.field, self.params.s)?;
        Ok((lhs - self.nonlinear_mass).abs() / self.nonlinear_mass)
    }

    /// Rebuilds the derived quantities from a stored grid solution.
    pub fn from_field(
        params: ProblemParams,
        field: Field,
        tolerance: f64,
        iterations: usize,
    ) -> Result<Self> {
        params.validate()?;
        let residual_norm = pde_residual(&field, &params)?;
        let profile = profile_from_field(&field, Some(params.tail_exponent()))?;
        let mass_sq = field.dot(&field);
        let nonlinear_mass = field.map(|v| v.abs().powf(params.p + 1.0)).integrate();
        Ok(Self {
            params,
            peak: profile.values[0],
            profile,
            mass_sq,
            nonlinear_mass,
            residual_norm,
            tolerance,
            iterations,
            field,
        })
    }

    /// `int U^p`
    pub fn power_mass(&self) -> f64 {
        self.field.map(|v| v.abs().powf(self.params.p)).integrate()
    }

    /// `int U`
    pub fn mass(&self) -> f64 {
        self.field.integrate()
    }
}

/// `sign(u) |u|^p`
pub(crate) fn signed_power(v: f64, p: f64) -> f64 {
    if p == 2.0 {
        v * v.abs()
    } else {
        v.signum() * v.abs().powf(p)
    }
}

/// `|(-Delta)^s u + u - sign(u)|u|^p| / |u|` in `L^2`.
pub fn pde_residual(u: &Field, params: &ProblemParams) -> Result<f64> {
    let au = spectral::apply_operator(u, params.s)?;
    let r = au.zip_map(u, |a, v| a - signed_power(v, params.p));
    Ok(r.norm_l2() / u.norm_l2())
}

/// Centered Gaussian `amplitude * exp(-|x|^2 / width^2)`.
pub fn gaussian_seed(grid: GridSpec, width: f64, amplitude: f64) -> Field {
    Field::from_fn(grid, |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        amplitude * (-r2 / (width * width)).exp()
    })
}

pub fn solve_ground_state(
    params: ProblemParams,
    grid: GridSpec,
    tol: f64,
    max_iters: usize,
) -> Result<GroundState> {
    solve_ground_state_from(params, gaussian_seed(grid, 1.0, 2.0), tol, max_iters)
}

/// Solves from a given positive seed and builds the profile.
pub fn solve_ground_state_from(
    params: ProblemParams,
    seed: Field,
    tol: f64,
    max_iters: usize,
) -> Result<GroundState> {
    let (u, iterations) = petviashvili(params, seed, tol, max_iters)?;
    GroundState::from_field(params, u, tol, iterations)
}

/// Petviashvili iteration `u <- gamma^beta (1 + |xi|^{2s})^{-1} u^p` from a
/// positive seed. Returns the converged grid field and the iteration count.
pub fn petviashvili(
    params: ProblemParams,
    seed: Field,
    tol: f64,
    max_iters: usize,
) -> Result<(Field, usize)> {
    params.validate()?;
    if seed.grid().dim() != params.dim {
        return Err(Error::GridMismatch(format!(
            "grid dimension {} differs from problem dimension {}",
            seed.grid().dim(),
            params.dim
        )));
    }
    let grid = *seed.grid();
    let p = params.p;
    let beta = p / (p - 1.0);
    let op = spectral::symbol(&grid, params.s, SymbolKind::Operator);
    let scale = spectral::parseval_scale(&grid);
    let origin = grid.origin_index();
    let mut u = seed;
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iters {
        let (lo, hi) = (u.min(), u.max());
        if !(hi > 1e-12) || !u.is_finite() {
            return Err(Error::Collapse { iterations: iter });
        }
        if lo < -0.1 * hi {
            return Err(Error::LossOfPositivity { min_value: lo, max_value: hi });
        }
        let up = u.map(|v| signed_power(v, p));
        let uh = spectral::forward(&u);
        let nh = spectral::forward(&up);
        let mut num = 0.0;
        let mut den = 0.0;
        let mut res2 = 0.0;
        let m = spectral::half_len(grid.points_per_dim());
        for (i, (a, b)) in uh.data().iter().zip(nh.data()).enumerate() {
            let j = i % m;
            let w = if j == 0 || j == m - 1 { 1.0 } else { 2.0 };
            num += w * op[i] * a.norm_sqr();
            den += w * (b * a.conj()).re;
            res2 += w * (a * op[i] - b).norm_sqr();
        }
        let unorm = u.norm_l2();
        residual = (scale * res2).sqrt() / unorm;
        if residual <= tol {
            if lo < -1e-8 * hi {
                return Err(Error::LossOfPositivity { min_value: lo, max_value: hi });
            }
            return Ok((u, iter - 1));
        }
        if !(den > 0.0) {
            return Err(Error::Collapse { iterations: iter });
        }
        let gamma = num / den;
        let mut next = nh;
        let res = spectral::symbol(&grid, params.s, SymbolKind::Resolvent);
        next.multiply(&res);
        let mut nu = spectral::inverse(next);
        nu.scale(gamma.powf(beta));
        let top = nu.argmax();
        if top != origin {
            nu = recenter(&nu, top);
        }
        u = nu;
    }
    Err(Error::NonConvergence { iterations: max_iters, residual })
}

fn recenter(u: &Field, top: usize) -> Field {
    let grid = u.grid();
    let n = grid.points_per_dim();
    let mut idx = vec![0usize; grid.dim()];
    grid.unravel(top, &mut idx);
    let shift: Vec<isize> = idx.iter().map(|&i| (n / 2) as isize - i as isize).collect();
    u.roll(&shift)
}

/// Radial profile of an approximately radial field centred at the origin.
///
/// The tail exponent is fitted from the data.
pub fn extract_radial_profile(u: &Field) -> Result<RadialProfile> {
    profile_from_field(u, None)
}

/// Relative tolerance for angular variation inside a radius shell.
const RADIAL_TOLERANCE: f64 = 0.05;
/// Samples below this fraction of the peak are treated as numerical zero.
const VALUE_FLOOR: f64 = 1e-10;
/// Radius of the core sampled from the trigonometric interpolant.
const CORE_RADIUS: f64 = 0.6;
/// Core samples per grid cell.
const CORE_REFINEMENT: usize = 16;

pub(crate) fn profile_from_field(u: &Field, exponent: Option<f64>) -> Result<RadialProfile> {
    let grid = *u.grid();
    let l = grid.half_width();
    let h = grid.spacing();
    let row = axis_row(u);
    let peak = row[0];
    if !(peak > 0.0) {
        return Err(Error::NotDecreasing { radius: 0.0 });
    }

    let r_end = 0.7 * l;
    let nodes = profile_nodes(h, r_end);
    // The core is too sharp for cubics on grid nodes; sample the spectral
    // interpolant of the axis row there instead.
    let mut core_nodes = ((CORE_RADIUS / h).floor() as usize).min(nodes.len() - 1);
    let line = AxisLine::new(u);
    let step = h / CORE_REFINEMENT as f64;
    let mut radii: Vec<f64> = (0..core_nodes * CORE_REFINEMENT).map(|j| j as f64 * step).collect();
    let mut values: Vec<f64> = radii.iter().map(|&r| line.value(r)).collect();
    // On coarse grids the interpolant ripples; keep the core only while it
    // decreases, ending one node short of the first rise.
    if let Some(j) = values.windows(2).position(|w| w[1] >= w[0]) {
        core_nodes = (j / CORE_REFINEMENT).saturating_sub(1);
        radii.truncate(core_nodes * CORE_REFINEMENT);
        values.truncate(core_nodes * CORE_REFINEMENT);
    }
    let mut slopes: Vec<f64> = radii.iter().map(|&r| line.slope(r)).collect();
    if let Some(d) = slopes.first_mut() {
        *d = 0.0;
    }
    let outer = nodes.iter().filter(|&&i| i >= core_nodes);
    for &i in outer {
        radii.push(i as f64 * h);
        values.push(row[i]);
        slopes.push(fd_slope(&row, i, h));
    }
    let cut = values.iter().position(|&v| v < VALUE_FLOOR * peak);
    let value_limited = cut.is_some();
    if let Some(c) = cut {
        radii.truncate(c);
        values.truncate(c);
        slopes.truncate(c);
    }
    if radii.len() < 8 {
        return Err(Error::InsufficientSamples { needed: 7, got: radii.len() });
    }
    check_decreasing(&radii, &values)?;
    let raw = MonotoneCubic::with_slopes(radii.clone(), values.clone(), slopes.clone())?;
    check_radial(u, &raw, r_end.min(0.5 * l).min(raw.upper()))?;

    let window = (0.3 * l, r_end);
    let (c, eta) = if value_limited {
        // match value and slope at the last sample
        let last = radii.len() - 1;
        let (r, v) = (radii[last], values[last]);
        let e = exponent.unwrap_or(-r * slopes[last] / v).max(f64::MIN_POSITIVE);
        (v * r.powf(e), e)
    } else {
        let fit = fit_tail_periodic(&radii, &values, window, l, grid.dim())?;
        for i in 0..radii.len() {
            values[i] -= fit.coefficient * image_sum(radii[i], l, grid.dim(), fit.exponent);
            slopes[i] -= fit.coefficient * image_sum_slope(radii[i], l, grid.dim(), fit.exponent);
        }
        check_decreasing(&radii, &values)?;
        let e = exponent.unwrap_or(fit.exponent);
        let (lo, hi) = window_indices(&radii, window);
        (fixed_exponent_coefficient(&radii[lo..hi], &values[lo..hi], e), e)
    };
    RadialProfile::new(radii, values, Some(slopes), c, eta)
}

/// Grid values along the positive first axis, starting at the origin, with
/// the other coordinates at zero. Wraps periodically past the box edge.
fn axis_row(u: &Field) -> Vec<f64> {
    let grid = *u.grid();
    let n = grid.points_per_dim();
    let mut idx = vec![n / 2; grid.dim()];
    (0..n)
        .map(|i| {
            idx[0] = (n / 2 + i) % n;
            u.values()[grid.ravel(&idx)]
        })
        .collect()
}

/// Sixth-order central difference on the periodic row; `row[0]` is the origin.
fn fd_slope(row: &[f64], i: usize, h: f64) -> f64 {
    let n = row.len();
    let at = |k: isize| row[(i as isize + k).rem_euclid(n as isize) as usize];
    (-at(-3) + 9.0 * at(-2) - 45.0 * at(-1) + 45.0 * at(1) - 9.0 * at(2) + at(3)) / (60.0 * h)
}

/// Every node up to radius 10, then nodes spaced geometrically (ratio 1.01,
/// at least one node apart) up to `r_end`.
fn profile_nodes(h: f64, r_end: f64) -> Vec<usize> {
    let last = (r_end / h).floor() as usize;
    let lin = ((10.0 / h).floor() as usize).min(last);
    let mut nodes: Vec<usize> = (0..=lin).collect();
    let mut i = lin;
    loop {
        i = (i + 1).max((i as f64 * 1.01).round() as usize);
        if i > last {
            break;
        }
        nodes.push(i);
    }
    nodes
}

fn window_indices(radii: &[f64], window: (f64, f64)) -> (usize, usize) {
    let lo = radii.partition_point(|&r| r < window.0);
    let hi = radii.partition_point(|&r| r <= window.1);
    (lo, hi)
}

fn fixed_exponent_coefficient(radii: &[f64], values: &[f64], eta: f64) -> f64 {
    let mean = radii
        .iter()
        .zip(values)
        .map(|(r, v)| v.ln() + eta * r.ln())
        .sum::<f64>()
        / radii.len() as f64;
    mean.exp()
}

/// Compares every grid point inside `r_check` with the axis profile.
fn check_radial(u: &Field, profile: &MonotoneCubic, r_check: f64) -> Result<()> {
    let grid = *u.grid();
    let peak = profile.values()[0];
    let mut idx = vec![0usize; grid.dim()];
    let mut worst = (0.0f64, 0.0f64);
    for (flat, &v) in u.values().iter().enumerate() {
        grid.unravel(flat, &mut idx);
        let r = idx
            .iter()
            .map(|&i| grid.coordinate(i).powi(2))
            .sum::<f64>()
            .sqrt();
        if r > r_check {
            continue;
        }
        let reference = profile.eval(r);
        if reference <= 1e-8 * peak {
            continue;
        }
        let dev = (v - reference).abs() / reference;
        if dev > worst.0 {
            worst = (dev, r);
        }
    }
    if worst.0 > RADIAL_TOLERANCE {
        return Err(Error::NotRadial { radius: worst.1, variation: worst.0 });
    }
    Ok(())
}

/// Least-squares line through `(log r, log v)`; returns `(c, eta)` for `c / r^eta`.
fn log_fit(radii: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(values)
        .filter(|(r, v)| **r > 0.0 && **v > 0.0)
        .map(|(r, v)| (r.ln(), v.ln()))
        .collect();
    if pts.len() <= 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: pts.len() });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::RankDeficient { smallest: 0.0 });
    }
    let slope = sxy / sxx;
    Ok(((my - slope * mx).exp(), -slope))
}

/// Log-log least-squares fit of the profile over `window`.
pub fn fit_tail(profile: &RadialProfile, window: (f64, f64)) -> Result<(f64, f64)> {
    let (lo, hi) = window_indices(&profile.radii, window);
    log_fit(&profile.radii[lo..hi], &profile.values[lo..hi])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicTailFit {
    pub coefficient: f64,
    pub exponent: f64,
    pub rms_log_residual: f64,
}

/// Fits `c * sum_n |r e_1 + 2 L n|^{-eta}` to samples of a periodic field
/// along the first axis, with `eta` free.
pub fn fit_tail_periodic(
    radii: &[f64],
    values: &[f64],
    window: (f64, f64),
    half_width: f64,
    dim: usize,
) -> Result<PeriodicTailFit> {
    let (lo, hi) = window_indices(radii, window);
    let r = &radii[lo..hi];
    let v = &values[lo..hi];
    if r.len() <= 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: r.len() });
    }
    if v.iter().any(|&x| x <= 0.0) {
        return Err(Error::NotDecreasing { radius: r[0] });
    }
    let logv: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let cost = |eta: f64| -> (f64, f64) {
        let logs: Vec<f64> = r
            .iter()
            .map(|&ri| (ri.powf(-eta) + image_sum(ri, half_width, dim, eta)).ln())
            .collect();
        let logc = logv.iter().zip(&logs).map(|(a, b)| a - b).sum::<f64>() / r.len() as f64;
        let ss = logv
            .iter()
            .zip(&logs)
            .map(|(a, b)| (a - b - logc).powi(2))
            .sum::<f64>();
        (ss, logc)
    };
    let n = dim as f64;
    let (mut a, mut b) = (n + 0.02, n + 6.0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (cost(x1).0, cost(x2).0);
    while b - a > 1e-9 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = cost(x1).0;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = cost(x2).0;
        }
    }
    let eta = 0.5 * (a + b);
    let (ss, logc) = cost(eta);
    Ok(PeriodicTailFit {
        coefficient: logc.exp(),
        exponent: eta,
        rms_log_residual: (ss / r.len() as f64).sqrt(),
    })
}

const IMAGE_SHELLS: i64 = 8;

fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        0 => 1.0,
        1 => 2.0,
        d => unit_ball_volume(d - 2) * 2.0 * PI / d as f64,
    }
}

/// `sum_{n != 0} |r e_1 + 2 L n|^{-eta}` for a point on the first axis, with
/// the shells beyond the explicit cube replaced by their continuum limit.
pub fn image_sum(r: f64, half_width: f64, dim: usize, eta: f64) -> f64 {
    let period = 2.0 * half_width;
    let mut total = 0.0;
    for_each_lattice(dim, |n| {
        if n.iter().all(|&v| v == 0) {
            return;
        }
        let d2: f64 = n
            .iter()
            .enumerate()
            .map(|(a, &v)| {
                let c = period * v as f64 + if a == 0 { r } else { 0.0 };
                c * c
            })
            .sum();
        total += d2.powf(-0.5 * eta);
    });
    let nd = dim as f64;
    if eta > nd {
        let side = (2 * IMAGE_SHELLS + 1) as f64 * period;
        let big_r = side * (1.0 / unit_ball_volume(dim)).powf(1.0 / nd);
        let shell = nd * unit_ball_volume(dim);
        total += shell * big_r.powf(nd - eta) / ((eta - nd) * period.powf(nd));
    }
    total
}

/// Radial derivative of [`image_sum`] (the continuum part is flat).
pub fn image_sum_slope(r: f64, half_width: f64, dim: usize, eta: f64) -> f64 {
    let period = 2.0 * half_width;
    let mut total = 0.0;
    for_each_lattice(dim, |n| {
        if n.iter().all(|&v| v == 0) {
            return;
        }
        let x1 = r + period * n[0] as f64;
        let d2: f64 = x1 * x1
            + n[1..]
                .iter()
                .map(|&v| (period * v as f64).powi(2))
                .sum::<f64>();
        total += -eta * x1 * d2.powf(-0.5 * eta - 1.0);
    });
    total
}

fn for_each_lattice(dim: usize, mut f: impl FnMut(&[i64])) {
    let mut n = vec![-IMAGE_SHELLS; dim];
    loop {
        f(&n);
        let mut a = 0;
        loop {
            if a == dim {
                return;
            }
            n[a] += 1;
            if n[a] > IMAGE_SHELLS {
                n[a] = -IMAGE_SHELLS;
                a += 1;
            } else {
                break;
            }
        }
    }
}

/// `U(|x|)` from the profile, with the algebraic tail outside the sampled range.
pub fn evaluate_u(gs: &GroundState, point: &[f64]) -> f64 {
    let r = point.iter().map(|v| v * v).sum::<f64>().sqrt();
    gs.profile.value(r)
}

/// `|L0 v| / |v|` with `L0 = (-Delta)^s + 1 - p U^{p-1}`.
pub fn linearized_residual(gs: &GroundState, v: &Field) -> Result<f64> {
    let p = gs.params.p;
    let weight = gs.field.map(|u| p * u.abs().powf(p - 1.0));
    let lv = spectral::apply_operator(v, gs.params.s)?.sub(&weight.mul(v));
    Ok(lv.norm_l2() / v.norm_l2())
}

/// `|L0 d_axis U| / |d_axis U|`, `axis` counted from 1.
pub fn kernel_residual(gs: &GroundState, axis: usize) -> Result<f64> {
    if axis == 0 || axis > gs.params.dim {
        return Err(Error::InvalidParameter(format!(
            "axis must lie in 1..={}, got {axis}",
            gs.params.dim
        )));
    }
    let d = spectral::derivative(&gs.field, axis - 1)?;
    linearized_residual(gs, &d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use approx::assert_relative_eq;

    fn params_1d() -> ProblemParams {
        ProblemParams::new(1, 0.5, 2.0).unwrap()
    }

    #[test]
    fn parameter_window() {
        assert!(ProblemParams::new(2, 0.5, 2.0).is_ok());
        assert!(ProblemParams::new(2, 0.5, 3.5).is_err());
        assert!(ProblemParams::new(1, 0.5, 50.0).is_ok());
        assert!(ProblemParams::new(3, 0.5, 1.0).is_err());
        assert!(ProblemParams::new(3, 1.5, 2.0).is_err());
        assert_relative_eq!(ProblemParams::new(2, 0.5, 2.0).unwrap().critical_exponent(), 3.0);
    }

    #[test]
    fn exact_power_law_tail_fit() {
        let radii: Vec<f64> = (0..50).map(|i| i as f64 * 0.5).collect();
        let values: Vec<f64> = radii
            .iter()
            .map(|&r| if r < 1.0 { 6.0 - r } else { 4.0 / (r * r * r) })
            .collect();
        let prof = RadialProfile::new(radii, values, None, 4.0, 3.0).unwrap();
        let (c, e) = fit_tail(&prof, (15.0, 24.0)).unwrap();
        assert!((e - 3.0).abs() < 1e-12 && (c - 4.0).abs() < 1e-11);
        assert!(fit_tail(&prof, (15.0, 16.0)).is_err());
        assert_relative_eq!(prof.value(250.0), 4.0 / 250f64.powi(3));
    }

    #[test]
    fn lorentzian_profile_and_tail() {
        let g = make_grid(1, 200.0, 8192).unwrap();
        let u = Field::from_fn(g, |x| 2.0 / (1.0 + x[0] * x[0]));
        let prof = extract_radial_profile(&u).unwrap();
        for r in [0.0, 0.3, 1.0, 3.0, 17.0] {
            // the periodic-image correction shifts a non-periodic sample by its background level
            assert!((prof.value(r) - 2.0 / (1.0 + r * r)).abs() < 1e-4, "r = {r}");
        }
        assert!(prof.tail_exponent > 1.5 && prof.tail_exponent < 3.0);
    }

    #[test]
    fn constant_field_is_not_decreasing() {
        let g = make_grid(2, 10.0, 32).unwrap();
        let err = extract_radial_profile(&Field::constant(g, 1.0)).unwrap_err();
        assert!(matches!(err, Error::NotDecreasing { .. }));
    }

    #[test]
    fn anisotropic_field_is_not_radial() {
        let g = make_grid(2, 10.0, 64).unwrap();
        let u = Field::from_fn(g, |x| (-(x[0] * x[0] + 4.0 * x[1] * x[1]) / 4.0).exp());
        assert!(matches!(extract_radial_profile(&u), Err(Error::NotRadial { .. })));
    }

    #[test]
    fn smooth_bump_profile() {
        let g = make_grid(2, 12.0, 192).unwrap();
        let f = |r: f64| (-r * r / 2.0).exp();
        let u = Field::from_fn(g, |x| f((x[0] * x[0] + x[1] * x[1]).sqrt()));
        let prof = extract_radial_profile(&u).unwrap();
        for r in [0.0, 0.4, 1.1, 2.7, 4.0] {
            assert!((prof.value(r) - f(r)).abs() < 1e-5, "r = {r}");
        }
    }

    #[test]
    fn one_dimensional_exact_ground_state() {
        let g = make_grid(1, 200.0, 8192).unwrap();
        let gs = solve_ground_state(params_1d(), g, 1e-10, 500).unwrap();
        assert!((gs.peak - 2.0).abs() < 2e-3 * 2.0, "peak {}", gs.peak);
        assert!((evaluate_u(&gs, &[1.0]) - 1.0).abs() < 2e-3);
        assert!((evaluate_u(&gs, &[3.0]) - 0.2).abs() < 1e-3);
        assert!((gs.nonlinear_mass - 3.0 * PI).abs() < 1e-3 * 3.0 * PI);
        assert!(gs.nehari_defect().unwrap() < 1e-4);
        assert!(kernel_residual(&gs, 1).unwrap() < 1e-3);
        assert!(linearized_residual(&gs, &gs.field).unwrap() > 0.1);
        assert!(kernel_residual(&gs, 2).is_err());
        let (c, e) = fit_tail(&gs.profile, (60.0, 140.0)).unwrap();
        assert!((e - 2.0).abs() < 0.1 && (c - 2.0).abs() < 0.1, "c {c} e {e}");
    }

    #[test]
    fn non_convergence_is_reported() {
        let g = make_grid(1, 200.0, 8192).unwrap();
        let err = solve_ground_state(params_1d(), g, 1e-10, 5).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 5, .. }));
    }

    #[test]
    fn zero_seed_collapses() {
        let g = make_grid(1, 20.0, 256).unwrap();
        let err = solve_ground_state_from(params_1d(), Field::zeros(g), 1e-10, 50).unwrap_err();
        assert!(matches!(err, Error::Collapse { .. }));
    }

    #[test]
    fn doubling_the_box_barely_moves_the_solution() {
        let small = solve_ground_state(params_1d(), make_grid(1, 100.0, 4096).unwrap(), 1e-11, 2000).unwrap();
        let large = solve_ground_state(params_1d(), make_grid(1, 200.0, 8192).unwrap(), 1e-11, 2000).unwrap();
        assert!((small.peak - large.peak).abs() <= 1e-3 * large.peak);
        for x in [0.5, 2.0, 10.0] {
            let (a, b) = (evaluate_u(&small, &[x]), evaluate_u(&large, &[x]));
            assert!((a - b).abs() <= 1e-3 * large.peak, "x = {x}: {a} vs {b}");
        }
    }

    #[test]
    fn different_seeds_reach_the_same_ground_state() {
        let g = make_grid(1, 100.0, 4096).unwrap();
        let a = solve_ground_state_from(params_1d(), gaussian_seed(g, 1.0, 2.0), 1e-11, 2000).unwrap();
        let b = solve_ground_state_from(params_1d(), gaussian_seed(g, 4.0, 0.5), 1e-11, 2000).unwrap();
        let diff = a.field.sub(&b.field).norm_l2() / a.field.norm_l2();
        assert!(diff <= 1e-8, "{diff}");
    }

    #[test]
    fn derivative_decays_one_power_faster() {
        // U ~ 2 / x^2, so U' ~ -4 / x^3
        let gs = solve_ground_state(params_1d(), make_grid(1, 200.0, 8192).unwrap(), 1e-11, 2000).unwrap();
        let d = spectral::derivative(&gs.field, 0).unwrap();
        let g = *gs.field.grid();
        let at = |x: f64| {
            let i = (0..g.points_per_dim()).min_by(|&a, &b| (g.coordinate(a) - x).abs().total_cmp(&(g.coordinate(b) - x).abs())).unwrap();
            (g.coordinate(i), d.values()[i])
        };
        let ((x1, d1), (x2, d2)) = (at(20.0), at(60.0));
        let exponent = (d1 / d2).ln() / (x2 / x1).ln();
        assert!((exponent - 3.0).abs() < 0.1, "{exponent}");
    }

    #[test]
    fn image_sum_matches_brute_force_in_one_dimension() {
        let (l, eta) = (10.0, 2.0);
        let brute: f64 = (1..200000)
            .map(|n| {
                let a = 2.0 * l * n as f64;
                (a + 3.0f64).powf(-eta) + (a - 3.0f64).powf(-eta)
            })
            .sum();
        assert!((image_sum(3.0, l, 1, eta) - brute).abs() < 1e-4 * brute);
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use crate::grid::make_grid;
    use std::sync::OnceLock;

    /// Coarse `N = 2, s = 1/2, p = 2` ground state shared by unit tests.
    pub(crate) fn small_ground_state_2d() -> GroundState {
        static GS: OnceLock<GroundState> = OnceLock::new();
        GS.get_or_init(|| {
            let params = ProblemParams::new(2, 0.5, 2.0).unwrap();
            let grid = make_grid(2, 16.0, 256).unwrap();
            solve_ground_state(params, grid, 1e-10, 500).unwrap()
        })
        .clone()
    }

    /// Computed `N = 1, s = 1/2, p = 2` ground state, close to `2 / (1 + x^2)`.
    pub(crate) fn lorentzian_ground_state_1d() -> GroundState {
        static GS: OnceLock<GroundState> = OnceLock::new();
        GS.get_or_init(|| {
            let params = ProblemParams::new(1, 0.5, 2.0).unwrap();
            let grid = make_grid(1, 200.0, 8192).unwrap();
            solve_ground_state(params, grid, 1e-11, 2000).unwrap()
        })
        .clone()
    }
}
