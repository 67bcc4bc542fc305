//! Lyapunov-Schmidt reduction around ring configurations: the projected
//! linearized operator, the correction `omega(r)`, the reduced energy, its
//! maximization over the radius window, and Newton refinement.
//!
//! Corrections live in spectral coordinates `y = A^{1/2} u_hat` with
//! `A = (-Delta)^s + 1`, stored as interleaved real and imaginary parts of the
//! half spectrum. With the Parseval weights the plain weighted dot product of
//! two coordinate vectors is the `H^s` pairing `<u, v>_s + int u v`, so the
//! linearized operator becomes `T = I - A^{-1/2} W A^{-1/2}`, a symmetric
//! perturbation of the identity.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::configuration::{
    assemble_power_sum, assemble_sum, bump_fields, check_capacity, directional_field,
    displacement_fields, rotation_defect, BumpConfiguration, ExactSymmetry, RadiusWindow,
};
use crate::energy::{energy_with, potential_field, EnergyBreakdown, PotentialModel};
use crate::error::{Error, Result};
use crate::ground_state::{signed_power, GroundState, ProblemParams};
use crate::grid::{Field, GridSpec};
use crate::krylov::{lanczos, minres, probe_vector, Inner};
use crate::spectral::{self, half_len, parseval_scale, HalfSpectrum, SymbolKind, TrigInterpolant};

/// Relative tolerance of every inner MINRES solve.
pub const INNER_TOL: f64 = 1e-8;
/// MINRES iterations between restarts.
pub const INNER_RESTART: usize = 200;
const INNER_RESTARTS: usize = 5;
/// A restarted solve that ends above this relative residual has stagnated.
const STAGNATION: f64 = 1e-6;
/// Damped outer steps tolerated before the contraction is declared failed.
const MAX_HALVINGS: usize = 8;

/// Half-spectrum coordinates weighted so that the dot product is the `H^s` pairing.
#[derive(Debug, Clone)]
pub(crate) struct SpectralSpace {
    grid: GridSpec,
    inv_sqrt: Arc<Vec<f64>>,
    sqrt_op: Vec<f64>,
    weights: Vec<f64>,
}

impl SpectralSpace {
    pub(crate) fn new(grid: GridSpec, s: f64) -> Self {
        let inv_sqrt = spectral::symbol(&grid, s, SymbolKind::InvSqrtOperator);
        let sqrt_op = inv_sqrt.iter().map(|v| 1.0 / v).collect();
        let m = half_len(grid.points_per_dim());
        let scale = parseval_scale(&grid);
        let mut weights = Vec::with_capacity(2 * inv_sqrt.len());
        for j in 0..inv_sqrt.len() {
            let last = j % m;
            let w = if last == 0 || last == m - 1 { scale } else { 2.0 * scale };
            weights.push(w);
            weights.push(w);
        }
        Self { grid, inv_sqrt, sqrt_op, weights }
    }

    pub(crate) fn len(&self) -> usize {
        self.weights.len()
    }

    pub(crate) fn inner(&self) -> Inner<'_> {
        Inner::weighted(&self.weights)
    }

    fn pack(spec: &HalfSpectrum, mult: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * mult.len());
        for (c, m) in spec.data().iter().zip(mult) {
            out.push(c.re * m);
            out.push(c.im * m);
        }
        out
    }

    fn unpack(&self, y: &[f64], mult: &[f64]) -> HalfSpectrum {
        let data = y
            .chunks_exact(2)
            .zip(mult)
            .map(|(c, m)| Complex64::new(c[0] * m, c[1] * m))
            .collect();
        HalfSpectrum::from_parts(self.grid, data)
    }

    /// Coordinates of the field `u`.
    pub(crate) fn coords(&self, u: &Field) -> Vec<f64> {
        Self::pack(&spectral::forward(u), &self.sqrt_op)
    }

    /// Riesz coordinates of the functional `phi -> int g phi`.
    pub(crate) fn dual(&self, g: &Field) -> Vec<f64> {
        Self::pack(&spectral::forward(g), &self.inv_sqrt)
    }

    /// The field with coordinates `y`.
    pub(crate) fn field(&self, y: &[f64]) -> Field {
        spectral::inverse(self.unpack(y, &self.inv_sqrt))
    }

    /// `out = y - A^{-1/2} W A^{-1/2} y`
    pub(crate) fn apply_shifted(&self, y: &[f64], weight: &Field, out: &mut [f64]) {
        let v = self.field(y).mul(weight);
        let d = self.dual(&v);
        for ((o, a), b) in out.iter_mut().zip(y).zip(&d) {
            *o = a - b;
        }
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Which constraint densities define the subspace `E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSet {
    /// No constraints; only meaningful for diagnostics.
    None,
    /// One radial-displacement constraint per bump.
    Radial,
    /// Radial, tangential and (for `N >= 3`) axial displacement per bump.
    Full,
}

/// Displacement fields of the bumps and the constraint densities built on them.
#[derive(Debug, Clone)]
pub struct ProjectionBasis {
    /// `Z_i = dU_{x^i} / dr`
    pub z_fields: Vec<Field>,
    /// `<U_{x^i}^{p-1} Z_i, Z_j>`
    pub gram: DMatrix<f64>,
    /// Constraint densities `U_{x^i}^{p-1} D_i` for every constrained direction
    /// `D_i`, radial ones first.
    pub densities: Vec<Field>,
    pub constraints: ConstraintSet,
    density_gram: DMatrix<f64>,
}

impl ProjectionBasis {
    pub fn new(
        gs: &GroundState,
        config: &BumpConfiguration,
        grid: &GridSpec,
        constraints: ConstraintSet,
    ) -> Result<Self> {
        check_capacity(config, grid)?;
        let p = gs.params.p;
        let k = config.k;
        let weights: Vec<Field> = bump_fields(gs, config, grid)
            .into_iter()
            .map(|u| u.map(|v| v.abs().powf(p - 1.0)))
            .collect();
        let z_fields = displacement_fields(gs, config, grid, false);
        let radial: Vec<Field> = z_fields.iter().zip(&weights).map(|(z, w)| z.mul(w)).collect();
        let gram = DMatrix::from_fn(k, k, |i, j| radial[i].dot(&z_fields[j]));

        let mut densities = Vec::new();
        if constraints != ConstraintSet::None {
            densities.extend(radial);
        }
        if constraints == ConstraintSet::Full {
            let tangential = displacement_fields(gs, config, grid, true);
            densities.extend(tangential.iter().zip(&weights).map(|(t, w)| t.mul(w)));
            for axis in 2..config.dim {
                let mut e = vec![0.0; config.dim];
                e[axis] = 1.0;
                for (c, w) in config.centers.iter().zip(&weights) {
                    densities.push(directional_field(gs, c, &e, grid).mul(w));
                }
            }
        }
        let n = densities.len();
        let density_gram = DMatrix::from_fn(n, n, |a, b| densities[a].dot(&densities[b]));
        Ok(Self { z_fields, gram, densities, constraints, density_gram })
    }

    /// Number of radial constraints among the densities.
    pub fn radial_count(&self) -> usize {
        if self.constraints == ConstraintSet::None {
            0
        } else {
            self.z_fields.len()
        }
    }

    /// `L^2`-orthogonal projection onto `{v : int density_a v = 0 for all a}`.
    pub fn project_l2(&self, v: &Field) -> Result<Field> {
        if self.densities.is_empty() {
            return Ok(v.clone());
        }
        let rhs = DVector::from_iterator(self.densities.len(), self.densities.iter().map(|d| d.dot(v)));
        let coef = solve_spd(&self.density_gram, &rhs)?;
        let mut out = v.clone();
        for (d, c) in self.densities.iter().zip(coef.iter()) {
            out.axpy(-c, d);
        }
        Ok(out)
    }

    /// Largest `|int density_a v|` relative to `|density_a| |v|` in `L^2`.
    pub fn constraint_violation(&self, v: &Field) -> f64 {
        let nv = v.norm_l2();
        if nv == 0.0 {
            return 0.0;
        }
        self.densities
            .iter()
            .map(|d| d.dot(v).abs() / (d.norm_l2() * nv))
            .fold(0.0, f64::max)
    }
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("constraint Gram matrix is not positive definite".into()))?;
    Ok(chol.solve(rhs))
}

/// `sum_i U_{x^i}^p - K (sum_i U_{x^i})^p`, the `L^2` representative of the
/// linear part of the energy at the ansatz.
pub fn linear_part(
    gs: &GroundState,
    config: &BumpConfiguration,
    model: &PotentialModel,
    grid: &GridSpec,
) -> Result<Field> {
    let p = gs.params.p;
    let powers = assemble_power_sum(gs, config, grid, p)?;
    let sum = assemble_sum(gs, config, grid)?;
    let k = potential_field(model, grid);
    let mut out = powers;
    for ((o, &u), &kv) in out.values_mut().iter_mut().zip(sum.values()).zip(k.values()) {
        *o -= kv * signed_power(u, p);
    }
    Ok(out)
}

/// Everything the reduction needs at one ring radius.
#[derive(Debug, Clone)]
pub struct RingSystem {
    pub config: BumpConfiguration,
    pub params: ProblemParams,
    /// `U_r`
    pub ansatz: Field,
    /// `K(|x|)` sampled on the grid
    pub potential: Field,
    pub basis: ProjectionBasis,
    pub model: PotentialModel,
    /// `p K U_r^{p-1}`
    weight: Field,
    /// `A U_r - K U_r^p`, the gradient of the energy at the ansatz
    gradient_at_ansatz: Field,
    space: SpectralSpace,
    /// Triangular factor `R` with `A^{-1/2}` images of the constraint
    /// densities equal to `orthonormal * R`; only the small matrix is kept.
    factor: DMatrix<f64>,
    /// Orthonormal basis of their span
    orthonormal: Vec<Vec<f64>>,
    constraint_gram: DMatrix<f64>,
}

impl RingSystem {
    pub fn new(
        gs: &GroundState,
        config: BumpConfiguration,
        model: &PotentialModel,
        grid: &GridSpec,
        constraints: ConstraintSet,
    ) -> Result<Self> {
        let params = gs.params;
        params.validate()?;
        model.validate()?;
        let basis = ProjectionBasis::new(gs, &config, grid, constraints)?;
        let ansatz = assemble_sum(gs, &config, grid)?;
        let potential = potential_field(model, grid);
        let p = params.p;
        let weight = ansatz.zip_map(&potential, |u, k| p * k * u.abs().powf(p - 1.0));
        let mut gradient_at_ansatz = spectral::apply_operator(&ansatz, params.s)?;
        for ((g, &u), &k) in gradient_at_ansatz
            .values_mut()
            .iter_mut()
            .zip(ansatz.values())
            .zip(potential.values())
        {
            *g -= k * signed_power(u, p);
        }
        let space = SpectralSpace::new(*grid, params.s);
        let inner = space.inner();
        let n = basis.densities.len();
        let mut factor = DMatrix::zeros(n, n);
        let mut orthonormal: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (a, d) in basis.densities.iter().enumerate() {
            let mut v = space.dual(d);
            let nq = inner.norm(&v);
            for _ in 0..2 {
                for (b, e) in orthonormal.iter().enumerate() {
                    let c = inner.dot(e, &v);
                    factor[(b, a)] += c;
                    axpy(&mut v, -c, e);
                }
            }
            let nv = inner.norm(&v);
            if !(nv > 1e-12 * nq) {
                return Err(Error::InvalidParameter("constraint densities are linearly dependent".into()));
            }
            factor[(a, a)] = nv;
            v.iter_mut().for_each(|x| *x /= nv);
            orthonormal.push(v);
        }
        let constraint_gram = factor.tr_mul(&factor);
        Ok(Self {
            config,
            params,
            ansatz,
            potential,
            basis,
            model: *model,
            weight,
            gradient_at_ansatz,
            space,
            factor,
            orthonormal,
            constraint_gram,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.ansatz.grid()
    }

    /// `|U_r|_s`
    pub fn ansatz_norm(&self) -> f64 {
        let y = self.space.coords(&self.ansatz);
        self.space.inner().norm(&y)
    }

    /// `H^s` pairings of `y` with the constraint images.
    fn constraint_pairings(&self, y: &[f64]) -> DVector<f64> {
        let inner = self.space.inner();
        let w = DVector::from_iterator(self.orthonormal.len(), self.orthonormal.iter().map(|e| inner.dot(e, y)));
        self.factor.tr_mul(&w)
    }

    /// `H^s`-orthogonal projection of coordinates onto `E`.
    fn project(&self, y: &mut [f64]) {
        let inner = self.space.inner();
        for e in &self.orthonormal {
            let c = inner.dot(e, y);
            axpy(y, -c, e);
        }
    }

    /// `P T P + (I - P)` on coordinates. Symmetric on the whole space, so
    /// rounding components outside `E` sit at eigenvalue 1 (inside the
    /// essential spectrum) instead of being amplified by Krylov recurrences.
    fn apply_projected(&self, y: &[f64], out: &mut [f64]) {
        let mut py = y.to_vec();
        self.project(&mut py);
        self.space.apply_shifted(&py, &self.weight, out);
        self.project(out);
        for ((o, a), b) in out.iter_mut().zip(y).zip(&py) {
            *o += a - b;
        }
    }

    /// `(-Delta)^s v + v - p K U_r^{p-1} v` with input and output projected
    /// `L^2`-orthogonally onto the constraint set.
    pub fn apply_l(&self, v: &Field) -> Result<Field> {
        let pv = self.basis.project_l2(v)?;
        let lv = spectral::apply_operator(&pv, self.params.s)?.sub(&self.weight.mul(&pv));
        self.basis.project_l2(&lv)
    }

    /// Solves `P T P y = rhs` by restarted MINRES.
    fn solve_projected(&self, rhs: &[f64], x0: Option<&[f64]>) -> Result<(Vec<f64>, usize)> {
        let inner = self.space.inner();
        let mut x = x0.map_or_else(|| vec![0.0; rhs.len()], |v| v.to_vec());
        let mut total = 0;
        let mut last = f64::INFINITY;
        for _ in 0..INNER_RESTARTS {
            let out = minres(|v, o| self.apply_projected(v, o), rhs, Some(&x), inner, INNER_TOL, INNER_RESTART);
            total += out.iterations;
            x = out.solution;
            last = out.relative_residual;
            if out.converged && last <= 10.0 * INNER_TOL {
                break;
            }
        }
        if last > STAGNATION {
            return Err(Error::InnerStagnation { iterations: total, residual: last });
        }
        self.project(&mut x);
        Ok((x, total))
    }

    /// `-K((U+w)^p - U^p - p U^{p-1} w)`, the density of `R'(w)`.
    fn remainder_density(&self, omega: &Field) -> Field {
        let p = self.params.p;
        let mut out = omega.clone();
        for (((o, &u), &k), &w) in out
            .values_mut()
            .iter_mut()
            .zip(self.ansatz.values())
            .zip(self.potential.values())
            .zip(omega.values())
        {
            *o = -k * (signed_power(u + w, p) - signed_power(u, p) - p * u.abs().powf(p - 1.0) * w);
        }
        out
    }

    /// Coordinates of the full gradient `l + L w + R'(w)` at `U_r + w`.
    fn gradient_coords(&self, y: &[f64]) -> Vec<f64> {
        let omega = self.space.field(y);
        let mut density = self.remainder_density(&omega);
        density.axpy(1.0, &self.gradient_at_ansatz);
        let mut out = vec![0.0; y.len()];
        self.space.apply_shifted(y, &self.weight, &mut out);
        let d = self.space.dual(&density);
        axpy(&mut out, 1.0, &d);
        out
    }

    /// Smallest `|theta|` over the spectrum of the projected operator on `E`,
    /// from Lanczos on its square. `probes` is the number of Lanczos steps.
    pub fn invertibility_estimate(&self, probes: usize) -> Result<f64> {
        if probes < 5 {
            return Err(Error::InvalidParameter(format!("need at least 5 probes, got {probes}")));
        }
        let noise = Field::from_raw(*self.grid(), probe_vector(self.grid().len(), 0x1ab5));
        let mut start = self.space.dual(&noise.mul(&self.ansatz));
        self.project(&mut start);
        let mut tmp = vec![0.0; start.len()];
        let ritz = lanczos(
            |v, o| {
                self.apply_projected(v, &mut tmp);
                self.apply_projected(&tmp, o);
            },
            &start,
            self.space.inner(),
            probes,
        )?;
        let smallest = &ritz[0];
        if !(smallest.value.is_finite()) {
            return Err(Error::EigenFailure("non-finite Ritz value".into()));
        }
        Ok(smallest.value.max(0.0).sqrt())
    }

    /// Fixed-point iteration `w <- -L^{-1}(l + R'(w))` on `E`.
    pub fn solve_correction(&self, tol: f64, max_outer: usize, warm: Option<&[f64]>) -> Result<CorrectionState> {
        let inner = self.space.inner();
        let mut y = match warm {
            Some(w) if w.len() == self.space.len() => {
                let mut v = w.to_vec();
                self.project(&mut v);
                v
            }
            _ => vec![0.0; self.space.len()],
        };
        let mut history = Vec::new();
        let mut prev_step = f64::INFINITY;
        let mut halvings = 0;
        let mut inner_iterations = 0;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < max_outer {
            iterations += 1;
            let omega = self.space.field(&y);
            let mut density = self.remainder_density(&omega);
            density.axpy(1.0, &self.gradient_at_ansatz);
            let mut rhs = self.space.dual(&density);
            rhs.iter_mut().for_each(|v| *v = -*v);
            self.project(&mut rhs);
            let (next, its) = self.solve_projected(&rhs, Some(&y))?;
            inner_iterations += its;
            let mut step: Vec<f64> = next.iter().zip(&y).map(|(a, b)| a - b).collect();
            let mut step_norm = inner.norm(&step);
            if step_norm > prev_step {
                halvings += 1;
                if halvings > MAX_HALVINGS || !step_norm.is_finite() {
                    history.push(inner.norm(&next));
                    return Err(Error::ContractionFailure { history });
                }
                step.iter_mut().for_each(|v| *v *= 0.5);
                step_norm *= 0.5;
            }
            axpy(&mut y, 1.0, &step);
            history.push(inner.norm(&y));
            prev_step = step_norm;
            if step_norm <= tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::ContractionFailure { history });
        }
        self.finish_state(y, iterations, inner_iterations, history)
    }

    fn finish_state(
        &self,
        y: Vec<f64>,
        iterations: usize,
        inner_iterations: usize,
        history: Vec<f64>,
    ) -> Result<CorrectionState> {
        let inner = self.space.inner();
        let full = self.gradient_coords(&y);
        let pairings = self.constraint_pairings(&full);
        let multipliers = if pairings.is_empty() {
            Vec::new()
        } else {
            solve_spd(&self.constraint_gram, &pairings)?.iter().copied().collect()
        };
        let mut projected = full;
        self.project(&mut projected);
        let residual = inner.norm(&projected);
        let sobolev_norm = inner.norm(&y);
        let radial = self.basis.radial_count();
        let pairing_sum: f64 = self.constraint_pairings(&y).iter().take(radial).sum();
        let constraint_defect = if sobolev_norm > 0.0 { pairing_sum.abs() / sobolev_norm } else { 0.0 };
        let radial_multiplier = if radial > 0 {
            multipliers[..radial].iter().sum::<f64>() / radial as f64
        } else {
            0.0
        };
        let bound_ratio = sobolev_norm / norm_bound_scale(&self.config, &self.params, &self.model);
        Ok(CorrectionState {
            omega: self.space.field(&y),
            sobolev_norm,
            residual,
            iterations,
            constraint_defect,
            multipliers,
            radial_multiplier,
            inner_iterations,
            history,
            bound_ratio,
            bound_flag: bound_ratio > BOUND_SAFETY,
            coords: y,
        })
    }

    /// `I(U_r + w)`
    pub fn reduced_energy(&self, state: &CorrectionState) -> Result<EnergyBreakdown> {
        let u = self.ansatz.add(&state.omega);
        energy_with(&u, &self.potential, &self.params)
    }
}

/// Safety factor on the normalized correction-norm bound.
pub const BOUND_SAFETY: f64 = 10.0;

/// `k^{1/2} ((k/r)^{(N+2s)/2} + r^{-m/2})`, the shape of the a priori
/// correction bound with the unknown constant set to one.
pub fn norm_bound_scale(config: &BumpConfiguration, params: &ProblemParams, model: &PotentialModel) -> f64 {
    let k = config.k as f64;
    let r = config.r;
    let interaction = (k / r).powf(0.5 * params.tail_exponent());
    let potential = if model.is_constant() { 0.0 } else { r.powf(-0.5 * model.decay) };
    k.sqrt() * (interaction + potential)
}

/// Converged correction `omega` at one ring radius.
#[derive(Debug, Clone)]
pub struct CorrectionState {
    pub omega: Field,
    /// `|omega|_s`
    pub sobolev_norm: f64,
    /// Norm of `l + L omega + R'(omega)` restricted to `E`.
    pub residual: f64,
    pub iterations: usize,
    /// `|sum_i int U_{x^i}^{p-1} Z_i omega| / |omega|_s`
    pub constraint_defect: f64,
    /// Lagrange multipliers of the constraint densities, radial ones first.
    pub multipliers: Vec<f64>,
    /// Mean of the radial multipliers; vanishes at critical radii.
    pub radial_multiplier: f64,
    pub inner_iterations: usize,
    /// `|omega|_s` after every outer iteration.
    pub history: Vec<f64>,
    /// `|omega|_s` over [`norm_bound_scale`].
    pub bound_ratio: f64,
    /// Set when `bound_ratio` exceeds [`BOUND_SAFETY`].
    pub bound_flag: bool,
    pub(crate) coords: Vec<f64>,
}

/// Knobs of the correction solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionSettings {
    pub constraints: ConstraintSet,
    /// Outer stopping threshold on successive `|omega|_s` changes.
    pub tol: f64,
    pub max_outer: usize,
}

impl Default for ReductionSettings {
    fn default() -> Self {
        Self { constraints: ConstraintSet::Full, tol: 1e-9, max_outer: 40 }
    }
}

/// One evaluation of the reduced energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedSample {
    pub k: usize,
    pub r: f64,
    /// `F(r) = I(U_r + omega)`, `NaN` when the correction failed.
    pub f: f64,
    pub omega_norm: f64,
    pub ansatz_norm: f64,
    pub radial_multiplier: f64,
    pub outer_iterations: usize,
    pub error: Option<String>,
}

impl ReducedSample {
    pub fn correction_ratio(&self) -> f64 {
        self.omega_norm / self.ansatz_norm
    }
}

/// Builds ring systems on one grid and remembers the last correction as a warm start.
#[derive(Debug)]
pub struct Reducer<'a> {
    pub gs: &'a GroundState,
    pub model: PotentialModel,
    pub grid: GridSpec,
    pub settings: ReductionSettings,
    warm: Option<Vec<f64>>,
}

impl<'a> Reducer<'a> {
    pub fn new(gs: &'a GroundState, model: PotentialModel, grid: GridSpec, settings: ReductionSettings) -> Self {
        Self { gs, model, grid, settings, warm: None }
    }

    pub fn system(&self, k: usize, r: f64) -> Result<RingSystem> {
        let config = crate::configuration::ring_centers(k, r, self.grid.dim())?;
        RingSystem::new(self.gs, config, &self.model, &self.grid, self.settings.constraints)
    }

    /// Correction at radius `r`, warm-started from the previous call.
    pub fn correct(&mut self, k: usize, r: f64) -> Result<(RingSystem, CorrectionState)> {
        let system = self.system(k, r)?;
        let state = system.solve_correction(self.settings.tol, self.settings.max_outer, self.warm.as_deref())?;
        self.warm = Some(state.coords.clone());
        Ok((system, state))
    }

    /// `F(r)`; correction failures are recorded in the sample.
    pub fn sample(&mut self, k: usize, r: f64) -> Result<ReducedSample> {
        match self.correct(k, r) {
            Ok((system, state)) => {
                let f = system.reduced_energy(&state)?.total;
                Ok(ReducedSample {
                    k,
                    r,
                    f,
                    omega_norm: state.sobolev_norm,
                    ansatz_norm: system.ansatz_norm(),
                    radial_multiplier: state.radial_multiplier,
                    outer_iterations: state.iterations,
                    error: None,
                })
            }
            Err(e @ (Error::ContractionFailure { .. } | Error::InnerStagnation { .. })) => {
                self.warm = None;
                Ok(ReducedSample {
                    k,
                    r,
                    f: f64::NAN,
                    omega_norm: f64::NAN,
                    ansatz_norm: f64::NAN,
                    radial_multiplier: f64::NAN,
                    outer_iterations: 0,
                    error: Some(e.to_string()),
                })
            }
            Err(e) => Err(e),
        }
    }
}

/// Result of a one-dimensional maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarMaximum {
    pub r_hat: f64,
    pub f_max: f64,
    /// `r_hat` lies more than one coarse step inside both endpoints.
    pub interior: bool,
    /// Coarse step of the initial scan.
    pub step: f64,
}

/// Coarse scan of `grid_points` equispaced radii, then golden-section
/// refinement around the best one until the bracket is below `rel_tol * r`.
/// Non-finite values count as minus infinity.
pub fn maximize_scalar(
    mut f: impl FnMut(f64) -> Result<f64>,
    lower: f64,
    upper: f64,
    grid_points: usize,
    rel_tol: f64,
) -> Result<ScalarMaximum> {
    if grid_points < 7 {
        return Err(Error::InvalidParameter(format!("need at least 7 scan points, got {grid_points}")));
    }
    if !(lower > 0.0 && upper > lower) {
        return Err(Error::InvalidParameter(format!("bad scan interval [{lower}, {upper}]")));
    }
    let step = (upper - lower) / (grid_points - 1) as f64;
    let mut values = Vec::with_capacity(grid_points);
    for i in 0..grid_points {
        values.push(f(lower + step * i as f64)?);
    }
    let key = |v: f64| if v.is_finite() { v } else { f64::NEG_INFINITY };
    let best = (0..grid_points).fold(0, |b, i| if key(values[i]) > key(values[b]) { i } else { b });
    if !values[best].is_finite() {
        return Err(Error::NonConvergence { iterations: grid_points, residual: f64::NAN });
    }
    let (mut r_hat, mut f_max) = (lower + step * best as f64, values[best]);
    if best > 0 && best + 1 < grid_points {
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (r_hat - step, r_hat + step);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = key(f(c)?);
        let mut fd = key(f(d)?);
        while b - a > rel_tol * r_hat {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = key(f(c)?);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = key(f(d)?);
            }
        }
        for (r, v) in [(c, fc), (d, fd)] {
            if v > f_max {
                r_hat = r;
                f_max = v;
            }
        }
    }
    let interior = r_hat - lower > step && upper - r_hat > step;
    Ok(ScalarMaximum { r_hat, f_max, interior, step })
}

/// Maximizer of the reduced energy over a radius window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedMaximum {
    pub k: usize,
    pub r_hat: f64,
    pub f_max: f64,
    pub interior: bool,
    pub window: RadiusWindow,
    /// Every evaluation in call order.
    pub samples: Vec<ReducedSample>,
}

/// Relative bracket width at which the golden-section refinement stops.
pub const MAXIMIZER_REL_TOL: f64 = 2e-3;

pub fn maximize_reduced(window: &RadiusWindow, reducer: &mut Reducer<'_>, grid_points: usize) -> Result<ReducedMaximum> {
    let k = window.k;
    let mut samples = Vec::new();
    let best = maximize_scalar(
        |r| {
            let s = reducer.sample(k, r)?;
            let f = s.f;
            samples.push(s);
            Ok(f)
        },
        window.lower,
        window.upper,
        grid_points,
        MAXIMIZER_REL_TOL,
    )?;
    Ok(ReducedMaximum {
        k,
        r_hat: best.r_hat,
        f_max: best.f_max,
        interior: best.interior,
        window: *window,
        samples,
    })
}

/// Secant iteration on the mean radial multiplier, which vanishes exactly
/// where `U_r + omega` solves the full equation.
pub fn critical_radius(
    reducer: &mut Reducer<'_>,
    k: usize,
    r0: f64,
    max_iters: usize,
) -> Result<(RingSystem, CorrectionState)> {
    let (mut r_prev, mut beta_prev) = {
        let (_, st) = reducer.correct(k, r0)?;
        (r0, st.radial_multiplier)
    };
    let mut r = r0 * (1.0 + 1e-3);
    // one system at a time: on refinement grids each holds several GB
    let mut last = Some(reducer.correct(k, r)?);
    for _ in 0..max_iters {
        let beta = last.as_ref().map_or(0.0, |l| l.1.radial_multiplier);
        let denom = beta - beta_prev;
        if denom == 0.0 || beta == 0.0 {
            break;
        }
        let next = r - beta * (r - r_prev) / denom;
        if !next.is_finite() || (next - r).abs() > 0.25 * r {
            return Err(Error::NonConvergence { iterations: max_iters, residual: beta.abs() });
        }
        r_prev = r;
        beta_prev = beta;
        r = next;
        drop(last.take());
        last = Some(reducer.correct(k, r)?);
        if (r - r_prev).abs() <= 1e-10 * r {
            break;
        }
    }
    Ok(last.expect("a system per secant step"))
}

/// Knobs of the Newton refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonSettings {
    /// Target for `|A u - K u^p| / |u|` in `L^2`.
    pub tol: f64,
    pub max_iters: usize,
    /// Relative tolerance of the inner MINRES solves.
    pub inner_tol: f64,
    pub symmetry: Option<SymmetryClass>,
}

/// Grid-exact subgroup of the dihedral symmetry of a `k`-ring, imposed
/// bitwise on Newton iterates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryClass {
    pub k: usize,
}

impl SymmetryClass {
    pub fn apply(&self, u: &Field) -> Field {
        ExactSymmetry::new(self.k).apply(u)
    }

    pub fn is_invariant(&self, u: &Field) -> bool {
        ExactSymmetry::new(self.k).is_invariant(u)
    }
}

/// Armijo backtracking factor and floor.
pub const ARMIJO_FACTOR: f64 = 0.5;
pub const MIN_STEP: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub solution: Field,
    pub pde_residual: f64,
    pub iterations: usize,
    pub inner_iterations: usize,
    /// Relative residual before every step and at exit.
    pub history: Vec<f64>,
    pub min_value: f64,
    pub max_value: f64,
}

/// `|A u - K sign(u)|u|^p| / |u|` in `L^2`.
pub fn relative_residual(u: &Field, potential: &Field, params: &ProblemParams) -> Result<f64> {
    let g = crate::energy::gradient_with(u, potential, params)?;
    Ok(g.norm_l2() / u.norm_l2())
}

/// Damped Newton on `A u - K sign(u)|u|^p = 0` with MINRES inner solves of
/// the Jacobian in the coordinates `A^{1/2} u_hat`.
///
/// With a symmetry class, the start and every step are symmetrized; the
/// equation commutes with these symmetries, so iterates stay in the class.
pub fn newton_refine(
    u0: &Field,
    model: &PotentialModel,
    params: &ProblemParams,
    settings: &NewtonSettings,
) -> Result<NewtonOutcome> {
    params.validate()?;
    let grid = *u0.grid();
    let potential = potential_field(model, &grid);
    let space = SpectralSpace::new(grid, params.s);
    let inner = space.inner();
    let project = |u: &Field| -> Field {
        match &settings.symmetry {
            Some(s) => s.apply(u),
            None => u.clone(),
        }
    };
    let p = params.p;
    let mut u = project(u0);
    let scale0 = u.max_abs();
    if scale0 == 0.0 {
        return Err(Error::ConvergedToZero);
    }
    let mut g = crate::energy::gradient_with(&u, &potential, params)?;
    let mut residual = g.norm_l2() / u.norm_l2();
    let mut history = vec![residual];
    let mut iterations = 0;
    let mut inner_iterations = 0;
    while residual > settings.tol {
        if iterations == settings.max_iters {
            return Err(Error::NonConvergence { iterations, residual });
        }
        iterations += 1;
        let weight = u.zip_map(&potential, |v, k| p * k * v.abs().powf(p - 1.0));
        let mut rhs = space.dual(&g);
        rhs.iter_mut().for_each(|v| *v = -*v);
        let mut y = vec![0.0; rhs.len()];
        let mut last = f64::INFINITY;
        for _ in 0..INNER_RESTARTS {
            let out = minres(
                |v, o| space.apply_shifted(v, &weight, o),
                &rhs,
                Some(&y),
                inner,
                settings.inner_tol,
                INNER_RESTART,
            );
            inner_iterations += out.iterations;
            y = out.solution;
            last = out.relative_residual;
            if out.converged && last <= 10.0 * settings.inner_tol {
                break;
            }
        }
        if !(last < 1.0) {
            return Err(Error::InnerStagnation { iterations: inner_iterations, residual: last });
        }
        let delta = project(&space.field(&y));
        let merit = g.norm_l2();
        let mut lambda = 1.0;
        loop {
            let mut trial = u.clone();
            trial.axpy(lambda, &delta);
            let gt = crate::energy::gradient_with(&trial, &potential, params)?;
            let mt = gt.norm_l2();
            if mt * mt <= (1.0 - 1e-4 * lambda) * merit * merit {
                u = trial;
                g = gt;
                break;
            }
            lambda *= ARMIJO_FACTOR;
            if lambda < MIN_STEP {
                return Err(Error::Divergence { residual });
            }
        }
        if u.max_abs() < 1e-8 * scale0 {
            return Err(Error::ConvergedToZero);
        }
        residual = g.norm_l2() / u.norm_l2();
        history.push(residual);
    }
    let (min_value, max_value) = (u.min(), u.max());
    if max_value <= 0.0 || u.max_abs() < 1e-8 * scale0 {
        return Err(Error::ConvergedToZero);
    }
    if min_value < -1e-8 * max_value {
        return Err(Error::SignChanging { min_value, max_value });
    }
    Ok(NewtonOutcome { solution: u, pde_residual: residual, iterations, inner_iterations, history, min_value, max_value })
}

/// `(max - min) / max` of `u` on the circle of radius `radius` in the first
/// two coordinates, sampled at `samples` equispaced angles.
pub fn angular_contrast(u: &Field, radius: f64, samples: usize) -> f64 {
    let interp = TrigInterpolant::new(u);
    let mut x = vec![0.0; u.grid().dim()];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..samples {
        let th = 2.0 * std::f64::consts::PI * j as f64 / samples as f64;
        x[0] = radius * th.cos();
        x[1] = radius * th.sin();
        let v = interp.eval(&x);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (hi - lo) / hi
}

/// Angular contrast on the ring circle above which a solution counts as non-radial.
pub const NON_RADIAL_CONTRAST: f64 = 0.5;

/// Final report of a refined ring solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub k: usize,
    pub r_star: f64,
    pub pde_residual: f64,
    pub energy: EnergyBreakdown,
    pub min_value: f64,
    pub max_value: f64,
    /// `|omega|_s / |U_r|_s` of the reduction that seeded the refinement.
    pub correction_ratio: f64,
    pub angular_contrast: f64,
    pub non_radial: bool,
    /// Largest relative change under rotation by `2 pi / k` near the ring.
    pub rotation_defect: f64,
    pub newton_iterations: usize,
    pub grid: GridSpec,
    #[serde(skip)]
    pub solution: Option<Field>,
}

impl SolveReport {
    pub fn new(
        outcome: NewtonOutcome,
        model: &PotentialModel,
        params: &ProblemParams,
        k: usize,
        r_star: f64,
        correction_ratio: f64,
    ) -> Result<Self> {
        let u = outcome.solution;
        let energy = crate::energy::energy(&u, model, params)?;
        let angular = angular_contrast(&u, r_star, 16 * k);
        let rotation = rotation_defect(&u, k, r_star + 4.0, 400);
        Ok(Self {
            k,
            r_star,
            pde_residual: outcome.pde_residual,
            energy,
            min_value: outcome.min_value,
            max_value: outcome.max_value,
            correction_ratio,
            angular_contrast: angular,
            non_radial: angular > NON_RADIAL_CONTRAST,
            rotation_defect: rotation,
            newton_iterations: outcome.iterations,
            grid: *u.grid(),
            solution: Some(u),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::ring_centers;
    use crate::energy::constant_a;
    use crate::ground_state::tests_support::{lorentzian_ground_state_1d, small_ground_state_2d};
    use proptest::prelude::*;

    fn system(k: usize, r: f64, model: PotentialModel, constraints: ConstraintSet) -> RingSystem {
        let gs = small_ground_state_2d();
        let config = ring_centers(k, r, 2).unwrap();
        RingSystem::new(&gs, config, &model, gs.field.grid(), constraints).unwrap()
    }

    fn noise(grid: GridSpec, seed: u64) -> Field {
        Field::from_raw(grid, probe_vector(grid.len(), seed))
    }

    #[test]
    fn single_bump_without_potential_has_no_linear_part() {
        let gs = small_ground_state_2d();
        let config = ring_centers(1, 1.0, 2).unwrap();
        let l = linear_part(&gs, &config, &PotentialModel::constant(), gs.field.grid()).unwrap();
        assert!(l.max_abs() <= 1e-12 * gs.field.max_abs().powf(2.0));
    }

    #[test]
    fn linear_part_decays_with_separation() {
        let gs = small_ground_state_2d();
        let model = PotentialModel::constant();
        let near = linear_part(&gs, &ring_centers(2, 1.5, 2).unwrap(), &model, gs.field.grid()).unwrap();
        let far = linear_part(&gs, &ring_centers(2, 4.5, 2).unwrap(), &model, gs.field.grid()).unwrap();
        assert!(far.norm_l2() < 0.2 * near.norm_l2());
    }

    #[test]
    fn apply_l_is_self_adjoint_and_respects_constraints() {
        let sys = system(3, 3.0, PotentialModel::smooth_algebraic(0.05, 1.0).unwrap(), ConstraintSet::Full);
        let grid = *sys.grid();
        let v = noise(grid, 1).mul(&sys.ansatz);
        let w = noise(grid, 2).mul(&sys.ansatz);
        let lv = sys.apply_l(&v).unwrap();
        let lw = sys.apply_l(&w).unwrap();
        let (a, b) = (lv.dot(&w), v.dot(&lw));
        assert!((a - b).abs() <= 1e-10 * (a.abs() + b.abs()), "{a} vs {b}");
        assert!(sys.basis.constraint_violation(&lv) <= 1e-8);
    }

    #[test]
    fn projection_is_idempotent() {
        let sys = system(4, 3.0, PotentialModel::constant(), ConstraintSet::Full);
        let v = noise(*sys.grid(), 3).mul(&sys.ansatz);
        let once = sys.basis.project_l2(&v).unwrap();
        let twice = sys.basis.project_l2(&once).unwrap();
        assert!(once.sub(&twice).norm_l2() <= 1e-10 * once.norm_l2());
        assert!(sys.basis.constraint_violation(&once) <= 1e-10);
    }

    #[test]
    fn constraints_remove_the_translation_kernel() {
        let model = PotentialModel::constant();
        let free = system(1, 1.0, model, ConstraintSet::None).invertibility_estimate(60).unwrap();
        let constrained = system(1, 1.0, model, ConstraintSet::Full).invertibility_estimate(60).unwrap();
        assert!(free < 1e-2, "unconstrained estimate {free}");
        assert!(constrained > 0.1, "constrained estimate {constrained}");
    }

    #[test]
    fn invertibility_needs_enough_probes() {
        let sys = system(1, 1.0, PotentialModel::constant(), ConstraintSet::Full);
        assert!(matches!(sys.invertibility_estimate(4), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn correction_of_single_bump_recovers_translated_ground_state() {
        // The free-space profile misses the periodic images; omega must add
        // exactly those back, so U_r + omega is the shifted grid solution.
        let gs = small_ground_state_2d();
        let sys = system(1, 1.0, PotentialModel::constant(), ConstraintSet::Full);
        let state = sys.solve_correction(1e-10, 40, None).unwrap();
        let shift = (1.0 / gs.field.grid().spacing()).round() as isize;
        let exact = gs.field.roll(&[shift, 0]);
        let err = sys.ansatz.add(&state.omega).sub(&exact).norm_l2() / exact.norm_l2();
        assert!(err <= 1e-8, "{err}");
        assert!(sys.basis.constraint_violation(&state.omega) <= 1e-8);
    }

    #[test]
    fn reduced_energy_of_single_bump_is_translation_invariant() {
        let gs = small_ground_state_2d();
        let a = constant_a(&gs);
        for r in [1.0, 2.5, 4.0] {
            let sys = system(1, r, PotentialModel::constant(), ConstraintSet::Full);
            let state = sys.solve_correction(1e-10, 40, None).unwrap();
            let f = sys.reduced_energy(&state).unwrap().total;
            assert!((f - a).abs() <= 1e-3 * a, "r = {r}: {f} vs {a}");
        }
    }

    #[test]
    fn scalar_maximizer_matches_closed_form() {
        // k (A - B0 k^3 / r^3 + B1 / r) peaks at r = sqrt(3 B0 / B1) k^{3/2}.
        let k = 4.0f64;
        let f = |r: f64| Ok(k * (1.0 - k.powi(3) / r.powi(3) + 1.0 / r));
        let max = maximize_scalar(f, 8.0, 40.0, 9, 1e-8).unwrap();
        let exact = 3f64.sqrt() * 8.0;
        assert!((max.r_hat - exact).abs() <= 1e-6 * exact, "{}", max.r_hat);
        assert!(max.interior);
    }

    #[test]
    fn scalar_maximizer_flags_boundary_and_bad_input() {
        let max = maximize_scalar(|r| Ok(-r), 1.0, 2.0, 7, 1e-6).unwrap();
        assert!(!max.interior);
        assert_eq!(max.r_hat, 1.0);
        assert!(maximize_scalar(|r| Ok(r), 1.0, 2.0, 6, 1e-6).is_err());
        assert!(maximize_scalar(|r| Ok(r), 2.0, 1.0, 7, 1e-6).is_err());
    }

    fn newton(tol: f64) -> NewtonSettings {
        NewtonSettings { tol, max_iters: 20, inner_tol: 1e-10, symmetry: None }
    }

    #[test]
    fn newton_keeps_the_ground_state() {
        let gs = lorentzian_ground_state_1d();
        let out = newton_refine(&gs.field, &PotentialModel::constant(), &gs.params, &newton(1e-10)).unwrap();
        assert!(out.iterations <= 2);
        assert!(out.pde_residual <= 1e-10);
    }

    #[test]
    fn newton_recovers_the_ground_state_from_a_scaled_start() {
        let gs = lorentzian_ground_state_1d();
        let start = gs.field.scaled(0.9);
        let out = newton_refine(&start, &PotentialModel::constant(), &gs.params, &newton(1e-10)).unwrap();
        let diff = out.solution.sub(&gs.field).norm_l2() / gs.field.norm_l2();
        assert!(diff <= 1e-6, "{diff}");
    }

    #[test]
    fn newton_rejects_degenerate_starts() {
        let gs = lorentzian_ground_state_1d();
        let model = PotentialModel::constant();
        let zero = Field::zeros(*gs.field.grid());
        assert!(matches!(newton_refine(&zero, &model, &gs.params, &newton(1e-10)), Err(Error::ConvergedToZero)));
        let small = gs.field.scaled(1e-3);
        assert!(matches!(newton_refine(&small, &model, &gs.params, &newton(1e-10)), Err(Error::ConvergedToZero)));
    }

    #[test]
    fn newton_reports_sign_changing_limits() {
        let gs = lorentzian_ground_state_1d();
        let negative = gs.field.scaled(-1.0);
        let err = newton_refine(&negative, &PotentialModel::constant(), &gs.params, &newton(1e-10)).unwrap_err();
        assert!(matches!(err, Error::SignChanging { .. } | Error::ConvergedToZero), "{err}");
    }

    #[test]
    fn angular_contrast_separates_rings_from_radial_fields() {
        let gs = small_ground_state_2d();
        // box anisotropy of the periodic images is the only angular dependence
        assert!(angular_contrast(&gs.field, 2.0, 64) < 1e-2);
        let ring = assemble_sum(&gs, &ring_centers(4, 4.0, 2).unwrap(), gs.field.grid()).unwrap();
        assert!(angular_contrast(&ring, 4.0, 64) > NON_RADIAL_CONTRAST);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn projected_fields_satisfy_constraints(seed in any::<u64>(), k in 1usize..5, r in 1.0f64..4.5) {
            let sys = system(k, r, PotentialModel::constant(), ConstraintSet::Full);
            let v = noise(*sys.grid(), seed).mul(&sys.ansatz);
            let pv = sys.basis.project_l2(&v).unwrap();
            prop_assert!(sys.basis.constraint_violation(&pv) <= 1e-10);
            let again = sys.basis.project_l2(&pv).unwrap();
            prop_assert!(again.sub(&pv).norm_l2() <= 1e-10 * pv.norm_l2().max(1e-300));
        }
    }
}
