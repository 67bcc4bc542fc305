//! The energy functional, its gradient, the model potential, pair interaction
//! coefficients and least-squares fitting of the ring-energy expansion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::ground_state::{signed_power, GroundState, ProblemParams};
use crate::grid::{Field, GridSpec};
use crate::quad;
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialForm {
    /// `K(rho) = 1 - a / (1 + rho^2)^{m/2}`
    SmoothAlgebraic,
    /// `K = 1`
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialModel {
    pub amplitude: f64,
    pub decay: f64,
    pub form: PotentialForm,
}

impl PotentialModel {
    pub fn smooth_algebraic(amplitude: f64, decay: f64) -> Result<Self> {
        let model = Self { amplitude, decay, form: PotentialForm::SmoothAlgebraic };
        model.validate()?;
        Ok(model)
    }

    pub fn constant() -> Self {
        Self { amplitude: 0.0, decay: 0.0, form: PotentialForm::Constant }
    }

    pub fn is_constant(&self) -> bool {
        self.form == PotentialForm::Constant || self.amplitude == 0.0
    }

    /// `0 < a < 1` keeps `K` inside `(0, 1]`; `m > 0` gives the limit 1.
    pub fn validate(&self) -> Result<()> {
        if self.form == PotentialForm::Constant {
            return Ok(());
        }
        if !(self.amplitude > 0.0 && self.amplitude < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "potential amplitude must lie in (0, 1), got {}",
                self.amplitude
            )));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "potential decay must be positive, got {}",
                self.decay
            )));
        }
        Ok(())
    }

    /// Leading coefficient `a int U^{p+1} / (p+1)` of the `1/r^m` energy term.
    pub fn b1_estimate(&self, gs: &GroundState) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            self.amplitude * gs.nonlinear_mass / (gs.params.p + 1.0)
        }
    }
}

pub fn eval_k(model: &PotentialModel, rho: f64) -> f64 {
    match model.form {
        PotentialForm::Constant => 1.0,
        PotentialForm::SmoothAlgebraic => {
            1.0 - model.amplitude * (1.0 + rho * rho).powf(-0.5 * model.decay)
        }
    }
}

/// `K(|x|)` on the grid.
pub fn potential_field(model: &PotentialModel, grid: &GridSpec) -> Field {
    Field::from_fn(*grid, |x| eval_k(model, x.iter().map(|v| v * v).sum::<f64>().sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub gagliardo_half: f64,
    pub mass_half: f64,
    pub potential_term: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn zero() -> Self {
        Self { gagliardo_half: 0.0, mass_half: 0.0, potential_term: 0.0, total: 0.0 }
    }
}

/// `I(u) = <u,u>_s / 2 + int u^2 / 2 - int K |u|^{p+1} / (p+1)`
pub fn energy(u: &Field, model: &PotentialModel, params: &ProblemParams) -> Result<EnergyBreakdown> {
    let k = potential_field(model, u.grid());
    energy_with(u, &k, params)
}

/// [`energy`] with a precomputed `K` field.
pub fn energy_with(u: &Field, k: &Field, params: &ProblemParams) -> Result<EnergyBreakdown> {
    params.validate()?;
    let gagliardo_half = 0.5 * spectral::gagliardo_norm_sq(u, params.s)?;
    let mass_half = 0.5 * u.dot(u);
    let q = params.p + 1.0;
    let potential_term = u.zip_map(k, |v, kv| kv * v.abs().powf(q)).integrate() / q;
    Ok(EnergyBreakdown {
        gagliardo_half,
        mass_half,
        potential_term,
        total: gagliardo_half + mass_half - potential_term,
    })
}

/// `(-Delta)^s u + u - K sign(u) |u|^p`, the `L^2` gradient of `I`.
pub fn gradient(u: &Field, model: &PotentialModel, params: &ProblemParams) -> Result<Field> {
    let k = potential_field(model, u.grid());
    gradient_with(u, &k, params)
}

pub fn gradient_with(u: &Field, k: &Field, params: &ProblemParams) -> Result<Field> {
    params.validate()?;
    let mut g = spectral::apply_operator(u, params.s)?;
    let p = params.p;
    for ((gi, &ui), &ki) in g.values_mut().iter_mut().zip(u.values()).zip(k.values()) {
        *gi -= ki * signed_power(ui, p);
    }
    Ok(g)
}

/// `(1/2 - 1/(p+1)) int U^{p+1}`, the energy of a single bump.
pub fn constant_a(gs: &GroundState) -> f64 {
    (0.5 - 1.0 / (gs.params.p + 1.0)) * gs.nonlinear_mass
}

const QUAD_REL: f64 = 1e-10;
const QUAD_PIECES: usize = 4000;

/// Surface area of the unit sphere in `R^n`, `|S^{n-1}|`.
fn sphere_area(n: usize) -> f64 {
    2.0 * PI.powf(0.5 * n as f64) / gamma_half_integer(n)
}

/// `Gamma(n / 2)` for positive integers `n`.
fn gamma_half_integer(n: usize) -> f64 {
    match n {
        1 => PI.sqrt(),
        2 => 1.0,
        _ => (0.5 * n as f64 - 1.0) * gamma_half_integer(n - 2),
    }
}

/// `int_{R^N} U^q` from the radial profile and its algebraic tail.
pub fn radial_integral(gs: &GroundState, q: f64) -> f64 {
    radial_integral_within(gs, q, f64::INFINITY)
}

/// `int_{|x| < radius} U^q`.
fn radial_integral_within(gs: &GroundState, q: f64, radius: f64) -> f64 {
    let n = gs.params.dim;
    let f = |r: f64| r.powi(n as i32 - 1) * gs.profile.value(r).powf(q);
    let r_max = gs.profile.max_radius();
    let mut breaks: Vec<f64> = [0.0, 1.0, 4.0, 16.0, r_max]
        .into_iter()
        .filter(|&b| b <= r_max.min(radius))
        .collect();
    breaks.push(r_max.min(radius));
    breaks.dedup();
    let mut g = f;
    let inner = quad::integrate_with_breaks(&mut g, &breaks, 0.0, QUAD_REL, QUAD_PIECES).value;
    let outer = if radius > r_max {
        // c^q r^{N-1-q eta} integrates in closed form when the tail is integrable
        let c = gs.profile.tail_coefficient;
        let e = gs.profile.tail_exponent;
        let power = n as f64 - q * e;
        if power >= 0.0 {
            f64::INFINITY
        } else if radius.is_infinite() {
            -c.powf(q) * r_max.powf(power) / power
        } else {
            c.powf(q) * (radius.powf(power) - r_max.powf(power)) / power
        }
    } else {
        0.0
    };
    sphere_area(n) * (inner + outer)
}

/// Integral of `f(t, rho)` over `R^N` written in cylindrical coordinates
/// about the first axis: `|S^{N-2}| int dt int rho^{N-2} f d rho`.
/// `t_breaks` must include the two peaks; the line is split at them.
fn cylindrical_integral(dim: usize, f: impl Fn(f64, f64) -> f64, t_breaks: &[f64], t_range: (f64, f64)) -> f64 {
    if dim == 1 {
        return line_integral(|t| f(t, 0.0), t_breaks, t_range);
    }
    let area = sphere_area(dim - 1);
    let g = |t: f64| {
        let h = |rho: f64| rho.powi(dim as i32 - 2) * f(t, rho);
        let mut h = h;
        let near = quad::integrate_with_breaks(&mut h, &[0.0, 0.5, 2.0, 8.0], 0.0, QUAD_REL, QUAD_PIECES).value;
        let far = quad::integrate_to_infinity(h, 8.0, 8.0, 0.0, QUAD_REL, QUAD_PIECES).value;
        near + far
    };
    area * line_integral(g, t_breaks, t_range)
}

/// `int_{t_range} g(t) dt`, infinite ends mapped to finite intervals.
fn line_integral(mut g: impl FnMut(f64) -> f64, t_breaks: &[f64], t_range: (f64, f64)) -> f64 {
    let (a, b) = t_range;
    let mut pts: Vec<f64> = t_breaks.iter().copied().filter(|&t| t > a && t < b).collect();
    let lo = if a.is_finite() { a } else { pts.first().copied().unwrap_or(0.0) - 8.0 };
    let hi = if b.is_finite() { b } else { pts.last().copied().unwrap_or(0.0) + 8.0 };
    pts.insert(0, lo);
    pts.push(hi);
    let mut total = quad::integrate_with_breaks(&mut g, &pts, 0.0, QUAD_REL, QUAD_PIECES).value;
    if a.is_infinite() {
        total += quad::integrate_to_infinity(|s| g(lo - (s - lo)), lo, 8.0, 0.0, QUAD_REL, QUAD_PIECES).value;
    }
    if b.is_infinite() {
        total += quad::integrate_to_infinity(&mut g, hi, 8.0, 0.0, QUAD_REL, QUAD_PIECES).value;
    }
    total
}

fn check_separation(gs: &GroundState, d: f64) -> Result<()> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidParameter(format!("separation must be positive, got {d}")));
    }
    if 0.5 * d > gs.profile.max_radius() {
        return Err(Error::GridTooSmall(format!(
            "separation {d} needs the sampled profile out to {}, have {}",
            0.5 * d,
            gs.profile.max_radius()
        )));
    }
    Ok(())
}

/// `d^{N+2s} int U(x)^p U(x - d e_1) dx` by adaptive quadrature on the profile.
pub fn interaction_coefficient(gs: &GroundState, d: f64) -> Result<f64> {
    check_separation(gs, d)?;
    let p = gs.params.p;
    let u = |r: f64| gs.profile.value(r);
    let f = |t: f64, rho: f64| {
        let r1 = (t * t + rho * rho).sqrt();
        let r2 = ((t - d) * (t - d) + rho * rho).sqrt();
        u(r1).powf(p) * u(r2)
    };
    let breaks = [-d, -1.0, 0.0, 1.0, 0.5 * d, d - 1.0, d, d + 1.0, 2.0 * d];
    let value = cylindrical_integral(gs.params.dim, f, &breaks, (f64::NEG_INFINITY, f64::INFINITY));
    Ok(d.powf(gs.params.tail_exponent()) * value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionBracket {
    /// From the two disjoint balls of radius `d/2` about the centers.
    pub lower: f64,
    /// `d^{N+2s} (U(d/2) int U^p + U(d/2)^p int U)`
    pub upper: f64,
}

/// Two-sided bounds on [`interaction_coefficient`] at separation `d`.
pub fn interaction_bracket(gs: &GroundState, d: f64) -> Result<InteractionBracket> {
    check_separation(gs, d)?;
    let p = gs.params.p;
    let scale = d.powf(gs.params.tail_exponent());
    let u = |r: f64| gs.profile.value(r);
    let half = 0.5 * d;
    let ball = |center: f64| {
        let f = |t: f64, rho: f64| {
            let r1 = (t * t + rho * rho).sqrt();
            let r2 = ((t - d) * (t - d) + rho * rho).sqrt();
            let rc = ((t - center) * (t - center) + rho * rho).sqrt();
            if rc < half {
                u(r1).powf(p) * u(r2)
            } else {
                0.0
            }
        };
        ball_integral(gs.params.dim, f, center, half)
    };
    let lower = scale * (ball(0.0) + ball(d));
    let upper = scale * (u(half) * radial_integral(gs, p) + u(half).powf(p) * radial_integral(gs, 1.0));
    Ok(InteractionBracket { lower, upper })
}

/// Integral of `f(t, rho)` over the ball of radius `radius` about `center e_1`,
/// with the cylinder radius cut at the ball boundary.
fn ball_integral(dim: usize, f: impl Fn(f64, f64) -> f64, center: f64, radius: f64) -> f64 {
    let (a, b) = (center - radius, center + radius);
    let breaks = [center - 1.0, center, center + 1.0];
    if dim == 1 {
        return line_integral(|t| f(t, 0.0), &breaks, (a, b));
    }
    let area = sphere_area(dim - 1);
    let g = |t: f64| {
        let top = (radius * radius - (t - center) * (t - center)).max(0.0).sqrt();
        let mut h = |rho: f64| rho.powi(dim as i32 - 2) * f(t, rho);
        let cuts: Vec<f64> = [0.0, 0.5, 2.0, 8.0, top].into_iter().filter(|&c| c <= top).collect();
        quad::integrate_with_breaks(&mut h, &cuts, 0.0, QUAD_REL, QUAD_PIECES).value
    };
    area * line_integral(g, &breaks, (a, b))
}

/// One sampled ring energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub k: usize,
    pub r: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionFit {
    #[serde(rename = "A_hat")]
    pub a_hat: f64,
    #[serde(rename = "B0_hat")]
    pub b0_hat: f64,
    #[serde(rename = "B1_hat")]
    pub b1_hat: f64,
    pub rms_relative_residual: f64,
    pub samples_used: usize,
}

impl ExpansionFit {
    /// `A - B0 k^{N+2s}/r^{N+2s} + B1/r^m`
    pub fn per_bump(&self, k: usize, r: f64, m: f64, params: &ProblemParams) -> f64 {
        let q = params.tail_exponent();
        self.a_hat - self.b0_hat * (k as f64 / r).powf(q) + self.b1_hat * r.powf(-m)
    }

    /// Maximizer `(B0 (N+2s) / (B1 m))^{1/(N+2s-m)} k^{(N+2s)/(N+2s-m)}`.
    pub fn r_tilde(&self, k: usize, m: f64, params: &ProblemParams) -> f64 {
        let q = params.tail_exponent();
        (self.b0_hat * q / (self.b1_hat * m)).powf(1.0 / (q - m)) * (k as f64).powf(q / (q - m))
    }
}

/// Least squares of `I/k` against `{1, -k^{N+2s}/r^{N+2s}, 1/r^m}`.
pub fn fit_expansion(samples: &[EnergySample], m: f64, params: &ProblemParams) -> Result<ExpansionFit> {
    if samples.len() < 6 {
        return Err(Error::InsufficientSamples { needed: 5, got: samples.len() });
    }
    let q = params.tail_exponent();
    let rows = samples.len();
    let mut a = DMatrix::<f64>::zeros(rows, 3);
    let mut y = DVector::<f64>::zeros(rows);
    for (i, s) in samples.iter().enumerate() {
        a[(i, 0)] = 1.0;
        a[(i, 1)] = -(s.k as f64 / s.r).powf(q);
        a[(i, 2)] = s.r.powf(-m);
        y[i] = s.value / s.k as f64;
    }
    // equilibrate columns so the rank test is scale free
    let norms: Vec<f64> = (0..3).map(|j| a.column(j).norm()).collect();
    if norms.iter().any(|&n| !(n > 0.0)) {
        return Err(Error::RankDeficient { smallest: 0.0 });
    }
    for j in 0..3 {
        a.column_mut(j).scale_mut(1.0 / norms[j]);
    }
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 1e-10 * smax {
        return Err(Error::RankDeficient { smallest: smin / smax });
    }
    check_spread(samples)?;
    let coef = svd
        .solve(&y, 1e-14 * smax)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let c: Vec<f64> = (0..3).map(|j| coef[j] / norms[j]).collect();
    let fitted = &a * &coef;
    let rms = ((0..rows).map(|i| ((fitted[i] - y[i]) / y[i]).powi(2)).sum::<f64>() / rows as f64).sqrt();
    Ok(ExpansionFit {
        a_hat: c[0],
        b0_hat: c[1],
        b1_hat: c[2],
        rms_relative_residual: rms,
        samples_used: rows,
    })
}

/// At least two values of `k`, each with three distinct radii.
fn check_spread(samples: &[EnergySample]) -> Result<()> {
    let mut ks: Vec<usize> = samples.iter().map(|s| s.k).collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 1, got: ks.len() });
    }
    for k in ks {
        let mut rs: Vec<f64> = samples.iter().filter(|s| s.k == k).map(|s| s.r).collect();
        rs.sort_by(f64::total_cmp);
        rs.dedup();
        if rs.len() < 3 {
            return Err(Error::InsufficientSamples { needed: 2, got: rs.len() });
        }
    }
    Ok(())
}
