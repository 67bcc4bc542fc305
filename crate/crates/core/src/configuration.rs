//! Ring configurations of bumps, the dihedral symmetry class, and the
//! admissible radius window.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::ground_state::{GroundState, ProblemParams};
use crate::grid::{Field, GridSpec};
use crate::krylov::probe_vector;
use crate::spectral::{half_len, TrigInterpolant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpConfiguration {
    pub k: usize,
    pub r: f64,
    pub dim: usize,
    pub centers: Vec<Vec<f64>>,
}

impl BumpConfiguration {
    /// Angle of center `i` (0-based).
    pub fn angle(&self, i: usize) -> f64 {
        2.0 * i as f64 * PI / self.k as f64
    }

    /// `|x^{i+1} - x^1| = 2 r sin(i pi / k)` for 0-based `i`.
    pub fn pair_distance(&self, i: usize) -> f64 {
        2.0 * self.r * (i as f64 * PI / self.k as f64).sin()
    }

    /// Centers in a labeling-independent order.
    fn sorted_centers(&self) -> Vec<&Vec<f64>> {
        let mut c: Vec<&Vec<f64>> = self.centers.iter().collect();
        c.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        c
    }
}

pub fn ring_centers(k: usize, r: f64, dim: usize) -> Result<BumpConfiguration> {
    if dim < 2 {
        return Err(Error::InvalidParameter("ring configurations need dimension at least 2".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("ring radius must be positive, got {r}")));
    }
    let centers = (0..k)
        .map(|i| {
            let th = 2.0 * i as f64 * PI / k as f64;
            let mut c = vec![0.0; dim];
            c[0] = r * th.cos();
            c[1] = r * th.sin();
            c
        })
        .collect();
    Ok(BumpConfiguration { k, r, dim, centers })
}

/// Requires the box half-width to be at least three ring radii.
pub fn check_capacity(config: &BumpConfiguration, grid: &GridSpec) -> Result<()> {
    if grid.dim() != config.dim {
        return Err(Error::GridMismatch(format!(
            "grid dimension {} vs configuration dimension {}",
            grid.dim(),
            config.dim
        )));
    }
    if grid.half_width() < 3.0 * config.r {
        return Err(Error::GridTooSmall(format!(
            "half width {} is below 3 r = {}",
            grid.half_width(),
            3.0 * config.r
        )));
    }
    Ok(())
}

/// `U_r = sum_i U(x - x^i)`, sampled from the radial profile.
pub fn assemble_sum(gs: &GroundState, config: &BumpConfiguration, grid: &GridSpec) -> Result<Field> {
    check_capacity(config, grid)?;
    Ok(sum_over_centers(grid, config, |r| gs.profile.value(r)))
}

/// `sum_i U(x - x^i)^q`
pub fn assemble_power_sum(
    gs: &GroundState,
    config: &BumpConfiguration,
    grid: &GridSpec,
    q: f64,
) -> Result<Field> {
    check_capacity(config, grid)?;
    Ok(sum_over_centers(grid, config, |r| gs.profile.value(r).powf(q)))
}

fn sum_over_centers(
    grid: &GridSpec,
    config: &BumpConfiguration,
    f: impl Fn(f64) -> f64,
) -> Field {
    let centers = config.sorted_centers();
    let l = grid.half_width();
    let mut y = vec![0.0; grid.dim()];
    Field::from_fn(*grid, |x| {
        let mut acc = 0.0;
        for c in &centers {
            acc += f(offset(x, c, l, &mut y));
        }
        acc
    })
}

/// Minimum-image offset `x - c` in the periodic box; returns its length.
fn offset(x: &[f64], c: &[f64], l: f64, y: &mut [f64]) -> f64 {
    let mut r2 = 0.0;
    for a in 0..x.len() {
        let mut d = x[a] - c[a];
        if d >= l {
            d -= 2.0 * l;
        } else if d < -l {
            d += 2.0 * l;
        }
        y[a] = d;
        r2 += d * d;
    }
    r2.sqrt()
}

/// One field per bump: `U(x - x^i)`.
pub fn bump_fields(gs: &GroundState, config: &BumpConfiguration, grid: &GridSpec) -> Vec<Field> {
    let l = grid.half_width();
    config
        .centers
        .iter()
        .map(|c| {
            let mut y = vec![0.0; grid.dim()];
            Field::from_fn(*grid, |x| gs.profile.value(offset(x, c, l, &mut y)))
        })
        .collect()
}

/// Derivative of `U(x - x^i)` with respect to moving center `i` with unit
/// speed along `direction`.
pub fn directional_field(gs: &GroundState, center: &[f64], direction: &[f64], grid: &GridSpec) -> Field {
    let l = grid.half_width();
    let mut y = vec![0.0; grid.dim()];
    Field::from_fn(*grid, |x| {
        let r = offset(x, center, l, &mut y);
        if r == 0.0 {
            return 0.0;
        }
        let proj: f64 = y.iter().zip(direction).map(|(a, b)| a * b).sum::<f64>() / r;
        -gs.profile.derivative(r) * proj
    })
}

/// Derivatives of `U(x - x^i)` with respect to moving center `i` radially
/// (`tangential == false`) or along the ring (unit speed).
pub fn displacement_fields(
    gs: &GroundState,
    config: &BumpConfiguration,
    grid: &GridSpec,
    tangential: bool,
) -> Vec<Field> {
    (0..config.k)
        .map(|i| {
            let th = config.angle(i);
            let mut e = vec![0.0; config.dim];
            if tangential {
                e[0] = -th.sin();
                e[1] = th.cos();
            } else {
                e[0] = th.cos();
                e[1] = th.sin();
            }
            directional_field(gs, &config.centers[i], &e, grid)
        })
        .collect()
}

/// `sum_{i=2}^k (2 r sin((i-1) pi / k))^{-eta}`
pub fn ring_sum(eta: f64, k: usize, r: f64) -> f64 {
    (1..k)
        .map(|j| (2.0 * r * (j as f64 * PI / k as f64).sin()).powf(-eta))
        .sum()
}

/// The same sum from the explicit center coordinates.
pub fn ring_sum_direct(eta: f64, k: usize, r: f64) -> Result<f64> {
    let cfg = ring_centers(k, r, 2)?;
    let x1 = &cfg.centers[0];
    Ok(cfg.centers[1..]
        .iter()
        .map(|c| ((c[0] - x1[0]).powi(2) + (c[1] - x1[1]).powi(2)).sqrt().powf(-eta))
        .sum())
}

/// Average over the rotations by `2 pi j / k` in the first coordinate plane and
/// the reflections `x_i -> -x_i`, `i >= 2`. Rotations are exact index maps for
/// multiples of a right angle and Fourier three-shear rotations otherwise.
pub fn symmetrize(u: &Field, k: usize) -> Result<Field> {
    let grid = *u.grid();
    if grid.dim() < 2 {
        return Err(Error::InvalidParameter("symmetrization needs dimension at least 2".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let mut v = reflect_average(u);
    if k > 1 {
        let mut acc = v.clone();
        for j in 1..k {
            acc.axpy(1.0, &rotate(&v, 2.0 * PI * j as f64 / k as f64));
        }
        acc.scale(1.0 / k as f64);
        v = acc;
    }
    Ok(v)
}

/// Average over `x_i -> -x_i` for every axis `i >= 1` (0-based).
fn reflect_average(u: &Field) -> Field {
    let mut v = u.clone();
    for axis in 1..u.grid().dim() {
        v = pair_average(&v, |idx, n| idx[axis] = (n - idx[axis]) % n);
    }
    v
}

/// `(v + v o g) / 2` for an index map `g`; symmetric in its two terms so the
/// result is bitwise invariant under `g`.
fn pair_average(v: &Field, map: impl Fn(&mut [usize], usize)) -> Field {
    let grid = *v.grid();
    let n = grid.points_per_dim();
    let mut idx = vec![0usize; grid.dim()];
    let vals = v.values();
    let out = (0..grid.len())
        .map(|flat| {
            grid.unravel(flat, &mut idx);
            map(&mut idx, n);
            0.5 * (vals[flat] + vals[grid.ravel(&idx)])
        })
        .collect();
    Field::from_raw(grid, out)
}

/// The part of the symmetry group realised exactly by index maps on a
/// square origin-centred grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactSymmetry {
    pub k: usize,
}

impl ExactSymmetry {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    pub fn includes_first_axis_reflection(&self) -> bool {
        self.k % 2 == 0
    }

    pub fn includes_quarter_turn(&self) -> bool {
        self.k % 4 == 0
    }

    /// Group average; the output is invariant bit for bit.
    pub fn apply(&self, u: &Field) -> Field {
        let mut v = reflect_average(u);
        if self.includes_first_axis_reflection() {
            v = pair_average(&v, |idx, n| idx[0] = (n - idx[0]) % n);
        }
        if self.includes_quarter_turn() {
            v = pair_average(&v, |idx, n| {
                let (a, b) = (idx[0], idx[1]);
                idx[0] = (n - b) % n;
                idx[1] = a;
            });
        }
        v
    }

    /// True when `u` is already invariant bit for bit.
    pub fn is_invariant(&self, u: &Field) -> bool {
        self.apply(u).values() == u.values()
    }
}

/// Rotation by `theta` in the first coordinate plane: `(R u)(x) = u(R^{-1} x)`.
pub fn rotate(u: &Field, theta: f64) -> Field {
    let quarter = (theta / (0.5 * PI)).round();
    let rest = theta - quarter * 0.5 * PI;
    let mut v = u.clone();
    for _ in 0..(quarter as i64).rem_euclid(4) {
        v = quarter_turn(&v);
    }
    if rest.abs() > 1e-15 {
        // three shears compose to u(R(-rest) x)
        let t = -(0.5 * rest).tan();
        let s = -rest.sin();
        v = shear(&v, 0, 1, t);
        v = shear(&v, 1, 0, -s);
        v = shear(&v, 0, 1, t);
    }
    v
}

/// `(Q u)(x) = u(Q^{-1} x)` for the counter-clockwise quarter turn `Q`.
fn quarter_turn(u: &Field) -> Field {
    let grid = *u.grid();
    let n = grid.points_per_dim();
    let mut idx = vec![0usize; grid.dim()];
    let vals = u.values();
    let out = (0..grid.len())
        .map(|flat| {
            grid.unravel(flat, &mut idx);
            // Q^{-1}(x0, x1) = (x1, -x0)
            let (a, b) = (idx[0], idx[1]);
            idx[0] = b;
            idx[1] = (n - a) % n;
            vals[grid.ravel(&idx)]
        })
        .collect();
    Field::from_raw(grid, out)
}

/// `v(x) = u(x - c x_along e_axis ... )`: shifts each line along `axis` by
/// `c * x_by`, spectrally.
fn shear(u: &Field, axis: usize, by: usize, c: f64) -> Field {
    use realfft::RealFftPlanner;
    use rustfft::num_complex::Complex64;

    let grid = *u.grid();
    let n = grid.points_per_dim();
    let m = half_len(n);
    let dim = grid.dim();
    let stride = n.pow((dim - 1 - axis) as u32);
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut line = vec![0.0; n];
    let mut spec = vec![Complex64::new(0.0, 0.0); m];
    let mut out = u.values().to_vec();
    let mut idx = vec![0usize; dim];
    let l = grid.half_width();
    for start in 0..grid.len() {
        grid.unravel(start, &mut idx);
        if idx[axis] != 0 {
            continue;
        }
        let shift = c * grid.coordinate(idx[by]);
        for (i, slot) in line.iter_mut().enumerate() {
            *slot = out[start + i * stride];
        }
        fwd.process(&mut line, &mut spec).expect("plan sizes");
        for (j, z) in spec.iter_mut().enumerate() {
            let xi = PI * j as f64 / l;
            if j == n / 2 {
                *z *= (xi * shift).cos();
            } else {
                *z *= Complex64::from_polar(1.0, -xi * shift);
            }
        }
        spec[0].im = 0.0;
        spec[m - 1].im = 0.0;
        inv.process(&mut spec, &mut line).expect("plan sizes");
        for (i, v) in line.iter().enumerate() {
            out[start + i * stride] = v / n as f64;
        }
    }
    Field::from_raw(grid, out)
}

/// Largest `|u(R x) - u(x)|` over deterministic probe points in the disk of
/// radius `radius`, relative to `max |u|`, using the trigonometric interpolant.
pub fn rotation_defect(u: &Field, k: usize, radius: f64, probes: usize) -> f64 {
    let interp = TrigInterpolant::new(u);
    let dim = u.grid().dim();
    let th = 2.0 * PI / k as f64;
    let (c, s) = (th.cos(), th.sin());
    let q = probe_vector(2 * probes, 0x5eed);
    let scale = u.max_abs();
    let mut worst = 0.0f64;
    let mut x = vec![0.0; dim];
    let mut y = vec![0.0; dim];
    for j in 0..probes {
        let rho = radius * (0.5 * (q[2 * j] + 1.0)).sqrt();
        let phi = PI * q[2 * j + 1];
        x[0] = rho * phi.cos();
        x[1] = rho * phi.sin();
        y[0] = c * x[0] - s * x[1];
        y[1] = s * x[0] + c * x[1];
        worst = worst.max((interp.eval(&x) - interp.eval(&y)).abs());
    }
    worst / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusWindow {
    pub k: usize,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    /// Maximizer of the leading-order reduced energy.
    pub r_tilde: f64,
}

impl RadiusWindow {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.lower && r <= self.upper
    }
}

/// `[((B0 (N+2s))/(B1 m) -/+ alpha)^{1/(N+2s-m)} k^{(N+2s)/(N+2s-m)}]`
pub fn admissible_window(
    k: usize,
    b0: f64,
    b1: f64,
    m: f64,
    params: &ProblemParams,
    alpha: f64,
) -> Result<RadiusWindow> {
    let q = params.tail_exponent();
    let lower_m = q / (q + 1.0);
    if !(m > lower_m && m < q) {
        return Err(Error::ExponentWindow { m, lower: lower_m, upper: q });
    }
    if !(b0 > 0.0 && b1 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "expansion constants must be positive, got B0 = {b0}, B1 = {b1}"
        )));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be non-negative, got {alpha}")));
    }
    let base = b0 * q / (b1 * m);
    if base - alpha <= 0.0 {
        return Err(Error::AlphaTooLarge { alpha });
    }
    let e = 1.0 / (q - m);
    let scale = (k as f64).powf(q * e);
    Ok(RadiusWindow {
        k,
        lower: (base - alpha).powf(e) * scale,
        upper: (base + alpha).powf(e) * scale,
        alpha,
        r_tilde: base.powf(e) * scale,
    })
}
