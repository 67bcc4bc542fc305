//! The four computational stages behind the command line: ground state,
//! ring-energy scans with the expansion fit, reduction and refinement.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::configuration::{admissible_window, assemble_sum, ring_centers, ring_sum, RadiusWindow};
use crate::energy::{
    constant_a, energy_with, fit_expansion, potential_field, EnergySample, ExpansionFit, PotentialModel,
};
use crate::error::{Error, Result};
use crate::ground_state::{extract_radial_profile, kernel_residual, linearized_residual, solve_ground_state, GroundState};
use crate::grid::GridSpec;
use crate::reduction::{
    critical_radius, maximize_reduced, newton_refine, NewtonSettings, ReducedSample, Reducer, ReductionSettings,
    SolveReport, SymmetryClass,
};

/// Validation figures of a computed ground state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundReport {
    pub grid: GridSpec,
    pub iterations: usize,
    pub peak: f64,
    pub pde_residual: f64,
    pub nehari_defect: f64,
    /// Tail exponent fitted over `[0.3 L, 0.7 L]` with periodic images.
    pub tail_exponent: f64,
    pub tail_coefficient: f64,
    /// `N + 2s`
    pub expected_tail_exponent: f64,
    /// `|L0 d_i U| / |d_i U|` per axis.
    pub kernel_residuals: Vec<f64>,
    /// `|L0 U| / |U|`
    pub l0u_ratio: f64,
}

pub fn run_ground(cfg: &RunConfig) -> Result<(GroundState, GroundReport)> {
    let gs = solve_ground_state(cfg.problem, cfg.grid, cfg.tolerances.ground, cfg.ground.max_iters)?;
    let report = ground_report(&gs)?;
    Ok((gs, report))
}

pub fn ground_report(gs: &GroundState) -> Result<GroundReport> {
    let fitted = extract_radial_profile(&gs.field)?;
    let kernel_residuals = (1..=gs.params.dim).map(|a| kernel_residual(gs, a)).collect::<Result<Vec<_>>>()?;
    Ok(GroundReport {
        grid: *gs.field.grid(),
        iterations: gs.iterations,
        peak: gs.peak,
        pde_residual: gs.residual_norm,
        nehari_defect: gs.nehari_defect()?,
        tail_exponent: fitted.tail_exponent,
        tail_coefficient: fitted.tail_coefficient,
        expected_tail_exponent: gs.params.tail_exponent(),
        kernel_residuals,
        l0u_ratio: linearized_residual(gs, &gs.field)?,
    })
}

/// `sum_{j >= 1} j^{-q}`
fn zeta(q: f64) -> f64 {
    let n = 10_000usize;
    let head: f64 = (1..n).map(|j| (j as f64).powf(-q)).sum();
    // Euler-Maclaurin tail from n
    let nf = n as f64;
    head + nf.powf(1.0 - q) / (q - 1.0) + 0.5 * nf.powf(-q)
}

/// A priori `(B0, B1)`: the pair interaction `c / d^{N+2s}` with
/// `c = tail coefficient * int U^p`, summed over a large ring, and the
/// potential's leading term.
pub fn estimate_constants(gs: &GroundState, model: &PotentialModel) -> (f64, f64) {
    let q = gs.params.tail_exponent();
    let c = gs.profile.tail_coefficient * gs.power_mass();
    let ring = 2.0 * zeta(q) / (2.0 * std::f64::consts::PI).powf(q);
    (0.5 * c * ring, model.b1_estimate(gs))
}

/// Radii of the energy scan for `k`: the explicit range when configured,
/// otherwise the window built from [`estimate_constants`].
pub fn scan_window(cfg: &RunConfig, gs: &GroundState, k: usize) -> Result<RadiusWindow> {
    if cfg.scan.r_upper > 0.0 {
        return Ok(RadiusWindow { k, lower: cfg.scan.r_lower, upper: cfg.scan.r_upper, alpha: 0.0, r_tilde: f64::NAN });
    }
    if cfg.potential.is_constant() {
        return Err(Error::Config("a constant potential has no window; set scan.r_lower and scan.r_upper".into()));
    }
    let (b0, b1) = estimate_constants(gs, &cfg.potential);
    admissible_window(k, b0, b1, cfg.potential.decay, &cfg.problem, cfg.window_alpha)
}

/// One row of an energy scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub k: usize,
    pub r: f64,
    pub gagliardo_half: f64,
    pub mass_half: f64,
    pub potential_term: f64,
    pub total: f64,
}

impl ScanRow {
    pub const HEADER: [&'static str; 6] = ["k", "r", "gagliardo_half", "mass_half", "potential_term", "total"];

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.k as f64, self.r, self.gagliardo_half, self.mass_half, self.potential_term, self.total]
    }
}

/// `I(U_r)` over equispaced radii of the scan window.
pub fn scan_k(cfg: &RunConfig, gs: &GroundState, k: usize) -> Result<Vec<ScanRow>> {
    let window = scan_window(cfg, gs, k)?;
    let grid = cfg.scan_grid(&window)?;
    let kf = potential_field(&cfg.potential, &grid);
    let n = cfg.scan.points;
    (0..n)
        .map(|j| {
            let r = window.lower + (window.upper - window.lower) * j as f64 / (n - 1) as f64;
            let config = ring_centers(k, r, cfg.problem.dim)?;
            let u = assemble_sum(gs, &config, &grid)?;
            let e = energy_with(&u, &kf, &cfg.problem)?;
            Ok(ScanRow {
                k,
                r,
                gagliardo_half: e.gagliardo_half,
                mass_half: e.mass_half,
                potential_term: e.potential_term,
                total: e.total,
            })
        })
        .collect()
}

/// Scan result; the fit is absent for a constant potential.
#[derive(Debug, Clone)]
pub struct EnergyScan {
    pub rows: Vec<ScanRow>,
    pub fit: Option<ExpansionFit>,
    /// `(1/2 - 1/(p+1)) int U^{p+1}`
    pub constant_a: f64,
}

pub fn run_energy_scan(cfg: &RunConfig, gs: &GroundState, jobs: usize) -> Result<EnergyScan> {
    let per_k = run_pool(jobs, &cfg.k_list, |k| scan_k(cfg, gs, k));
    let rows: Vec<ScanRow> = per_k.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    let fit = if cfg.potential.is_constant() {
        None
    } else {
        let samples: Vec<EnergySample> =
            rows.iter().map(|r| EnergySample { k: r.k, r: r.r, value: r.total }).collect();
        Some(fit_expansion(&samples, cfg.potential.decay, &cfg.problem)?)
    };
    Ok(EnergyScan { rows, fit, constant_a: constant_a(gs) })
}

/// `(k, r, eta, sum)` rows of the ring sum at the scan radii with `eta = N + 2s`.
pub fn ring_sum_rows(cfg: &RunConfig, rows: &[ScanRow]) -> Vec<Vec<f64>> {
    let eta = cfg.problem.tail_exponent();
    rows.iter().map(|r| vec![r.k as f64, r.r, eta, ring_sum(eta, r.k, r.r)]).collect()
}

/// Per-`k` outcome of the reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceSummary {
    pub k: usize,
    pub window: RadiusWindow,
    pub grid: GridSpec,
    pub r_hat: f64,
    pub r_tilde: f64,
    pub interior: bool,
    #[serde(rename = "F_max")]
    pub f_max: f64,
    pub omega_norm: f64,
    pub ansatz_norm: f64,
    pub correction_ratio: f64,
    /// Smallest singular value of the projected operator at `r_hat`.
    pub rho_hat: f64,
    pub bound_ratio: f64,
    pub bound_flag: bool,
    /// Radii whose correction failed, with the reason.
    pub failures: Vec<(f64, String)>,
    /// Every evaluation in call order; persisted as CSV.
    #[serde(skip)]
    pub samples: Vec<ReducedSample>,
}

/// Radius window of the reduction from the fitted constants.
pub fn reduce_window(cfg: &RunConfig, fit: &ExpansionFit, k: usize) -> Result<RadiusWindow> {
    admissible_window(k, fit.b0_hat, fit.b1_hat, cfg.potential.decay, &cfg.problem, cfg.window_alpha)
}

fn reduction_settings(cfg: &RunConfig) -> ReductionSettings {
    ReductionSettings { tol: cfg.tolerances.correction, max_outer: cfg.reduce.max_outer, ..ReductionSettings::default() }
}

pub fn reduce_k(cfg: &RunConfig, gs: &GroundState, window: &RadiusWindow) -> Result<ReduceSummary> {
    let grid = cfg.reduce_grid(window)?;
    let mut reducer = Reducer::new(gs, cfg.potential, grid, reduction_settings(cfg));
    let best = maximize_reduced(window, &mut reducer, cfg.reduce.grid_points)?;
    let (system, state) = reducer.correct(window.k, best.r_hat)?;
    let rho_hat = system.invertibility_estimate(cfg.reduce.ritz_steps)?;
    let ansatz_norm = system.ansatz_norm();
    Ok(ReduceSummary {
        k: window.k,
        window: *window,
        grid,
        r_hat: best.r_hat,
        r_tilde: window.r_tilde,
        interior: best.interior,
        f_max: best.f_max,
        omega_norm: state.sobolev_norm,
        ansatz_norm,
        correction_ratio: state.sobolev_norm / ansatz_norm,
        rho_hat,
        bound_ratio: state.bound_ratio,
        bound_flag: state.bound_flag,
        failures: best.samples.iter().filter_map(|s| s.error.clone().map(|e| (s.r, e))).collect(),
        samples: best.samples,
    })
}

/// Reduction for every `k`; failures stay per `k`.
pub fn run_reduce(cfg: &RunConfig, gs: &GroundState, fit: &ExpansionFit, jobs: usize) -> Vec<Result<ReduceSummary>> {
    run_pool(jobs, &cfg.k_list, |k| {
        timed("reduce", k, || reduce_window(cfg, fit, k).and_then(|w| reduce_k(cfg, gs, &w)))
    })
}

/// Runs one per-`k` job and logs its outcome and wall time to stderr.
fn timed<T>(stage: &str, k: usize, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    let status = match &out {
        Ok(_) => "ok".to_string(),
        Err(e) => format!("failed ({e})"),
    };
    eprintln!("{stage} k={k}: {status} after {:.1} s", start.elapsed().as_secs_f64());
    out
}

/// Secant on the radial multiplier from `r_hat` on the refinement grid,
/// then Newton in the grid-exact symmetry class.
pub fn solve_k(cfg: &RunConfig, gs: &GroundState, k: usize, r_hat: f64) -> Result<SolveReport> {
    let grid = cfg.solve_grid(r_hat)?;
    let mut reducer = Reducer::new(gs, cfg.potential, grid, reduction_settings(cfg));
    let (system, state) = critical_radius(&mut reducer, k, r_hat, cfg.solve.secant_iters)?;
    let u0 = system.ansatz.add(&state.omega);
    let ratio = state.sobolev_norm / system.ansatz_norm();
    let r_star = system.config.r;
    drop((system, state, reducer));
    let settings = NewtonSettings {
        tol: cfg.tolerances.newton,
        max_iters: cfg.solve.max_iters,
        inner_tol: cfg.solve.inner_tol,
        symmetry: Some(SymmetryClass { k }),
    };
    let outcome = newton_refine(&u0, &cfg.potential, &cfg.problem, &settings)?;
    SolveReport::new(outcome, &cfg.potential, &cfg.problem, k, r_star, ratio)
}

pub fn run_solve(cfg: &RunConfig, gs: &GroundState, summaries: &[ReduceSummary], jobs: usize) -> Vec<Result<SolveReport>> {
    let ks: Vec<usize> = summaries.iter().map(|s| s.k).collect();
    run_pool(jobs, &ks, |k| {
        let s = summaries.iter().find(|s| s.k == k).expect("summary per k");
        timed("solve", k, || solve_k(cfg, gs, k, s.r_hat))
    })
}

/// Runs `f` over `items` on at most `jobs` threads; results keep input order.
pub fn run_pool<T: Send>(jobs: usize, items: &[usize], f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = jobs.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(|&k| f(k)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let out = f(items[i]);
                slots.lock().expect("result slots")[i] = Some(out);
            });
        }
    });
    slots.into_inner().expect("result slots").into_iter().map(|v| v.expect("every job ran")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_three() {
        assert!((zeta(3.0) - 1.202_056_903_159_594_2).abs() < 1e-12);
        assert!((zeta(2.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-11);
    }

    #[test]
    fn pool_keeps_order() {
        let items: Vec<usize> = (0..23).collect();
        for jobs in [1, 3, 64] {
            assert_eq!(run_pool(jobs, &items, |k| k * k), items.iter().map(|k| k * k).collect::<Vec<_>>());
        }
        assert!(run_pool(4, &[], |k| k).is_empty());
    }
}
