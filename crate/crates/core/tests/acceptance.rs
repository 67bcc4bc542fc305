//! End-to-end acceptance run on the canonical configuration. Prints one
//! PASS/FAIL line per criterion and exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use fracbump::config::RunConfig;
use fracbump::configuration::{ring_sum, ring_sum_direct};
use fracbump::energy::{energy, gradient, interaction_bracket, interaction_coefficient, PotentialModel};
use fracbump::error::Result;
use fracbump::grid::{make_grid, Field, GridSpec};
use fracbump::ground_state::{solve_ground_state, GroundState, ProblemParams};
use fracbump::pipeline::{ground_report, EnergyScan, run_energy_scan, run_ground, run_reduce, run_solve, ReduceSummary};
use fracbump::reduction::SolveReport;
use fracbump::spectral::{apply_operator, apply_resolvent, fractional_laplacian};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }

    fn failed(e: impl std::fmt::Display) -> Self {
        Self { pass: false, detail: format!("error: {e}") }
    }
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn from_result(r: Result<Verdict>) -> Verdict {
    r.unwrap_or_else(Verdict::failed)
}

/// 1: the computed one-dimensional ground state against `2 / (1 + x^2)`.
fn lorentzian() -> Result<Verdict> {
    let start = Instant::now();
    let params = ProblemParams::new(1, 0.5, 2.0)?;
    let grid = make_grid(1, 200.0, 8192)?;
    let gs = solve_ground_state(params, grid, 1e-11, 2000)?;
    let secs = start.elapsed().as_secs_f64();
    let mut worst = 0.0f64;
    for (i, &v) in gs.field.values().iter().enumerate() {
        let x = grid.coordinate(i);
        if x.abs() <= 50.0 {
            worst = worst.max((v - 2.0 / (1.0 + x * x)).abs());
        }
    }
    let linf = worst / 2.0;
    let nehari = gs.nehari_defect()?;
    Ok(Verdict::new(
        linf <= 1e-3 && nehari <= 1e-4 && secs <= 30.0,
        format!("relative Linf {linf:.2e} (<= 1e-3), Nehari {nehari:.2e} (<= 1e-4), {secs:.1} s (<= 30)"),
    ))
}

/// 2: tail slope of a `1024^2` ground state.
fn tail_slope() -> Result<Verdict> {
    let start = Instant::now();
    let params = ProblemParams::new(2, 0.5, 2.0)?;
    let gs = solve_ground_state(params, make_grid(2, 60.0, 1024)?, 1e-11, 2000)?;
    let report = ground_report(&gs)?;
    let secs = start.elapsed().as_secs_f64();
    let slope = -report.tail_exponent;
    Ok(Verdict::new(
        (slope + 3.0).abs() <= 0.15 && secs <= 300.0,
        format!("slope {slope:.4} on [0.3L, 0.7L] (-3 +- 0.15), {secs:.1} s (<= 300)"),
    ))
}

/// 3: translation modes in the kernel, `U` outside it.
fn kernel(gs: &GroundState) -> Result<Verdict> {
    let report = ground_report(gs)?;
    let worst = report.kernel_residuals.iter().copied().fold(0.0, f64::max);
    Ok(Verdict::new(
        worst <= 1e-3 && report.l0u_ratio >= 0.1,
        format!("kernel residuals {} (<= 1e-3), L0U ratio {:.3} (>= 0.1)", sci(&report.kernel_residuals), report.l0u_ratio),
    ))
}

/// 4: the scaled pair interaction settles and sits in its bracket.
fn interaction(gs: &GroundState) -> Result<Verdict> {
    let (c30, c60) = (interaction_coefficient(gs, 30.0)?, interaction_coefficient(gs, 60.0)?);
    let (b30, b60) = (interaction_bracket(gs, 30.0)?, interaction_bracket(gs, 60.0)?);
    let change = (c60 - c30).abs() / c60.abs().max(c30.abs());
    let inside = |c: f64, lo: f64, hi: f64| c >= lo && c <= hi;
    Ok(Verdict::new(
        change <= 0.1 && inside(c30, b30.lower, b30.upper) && inside(c60, b60.lower, b60.upper),
        format!(
            "d=30: {c30:.4} in [{:.4}, {:.4}], d=60: {c60:.4} in [{:.4}, {:.4}], change {:.1}% (<= 10%)",
            b30.lower,
            b30.upper,
            b60.lower,
            b60.upper,
            100.0 * change
        ),
    ))
}

/// 5: the three-term expansion fits the ring energies.
fn expansion(scan: &EnergyScan) -> Verdict {
    let Some(fit) = scan.fit else {
        return Verdict::new(false, "no fit for a constant potential".into());
    };
    let a_err = (fit.a_hat - scan.constant_a).abs() / scan.constant_a;
    Verdict::new(
        fit.rms_relative_residual <= 0.02 && a_err <= 0.02 && fit.b0_hat > 0.0 && fit.b1_hat > 0.0,
        format!(
            "rms {:.2e} (<= 2%), A_hat {:.5} vs {:.5} ({:.2}%), B0_hat {:.4e}, B1_hat {:.4e}",
            fit.rms_relative_residual,
            fit.a_hat,
            scan.constant_a,
            100.0 * a_err,
            fit.b0_hat,
            fit.b1_hat
        ),
    )
}

fn reduced<'a>(results: &'a [(usize, Result<ReduceSummary>)]) -> std::result::Result<Vec<&'a ReduceSummary>, Verdict> {
    results
        .iter()
        .map(|(k, r)| r.as_ref().map_err(|e| Verdict::failed(format!("k={k}: {e}"))))
        .collect()
}

/// 6: the reduced maximizer lands near the predicted radius.
fn maximizer(results: &[(usize, Result<ReduceSummary>)]) -> Verdict {
    let rs = match reduced(results) {
        Ok(v) => v,
        Err(v) => return v,
    };
    let mut pass = true;
    let parts: Vec<String> = rs
        .iter()
        .map(|s| {
            let rel = (s.r_hat - s.r_tilde).abs() / s.r_tilde;
            pass &= rel <= 0.1 && s.interior;
            format!("k={}: r_hat {:.3} vs r_tilde {:.3} ({:.1}%, interior {})", s.k, s.r_hat, s.r_tilde, 100.0 * rel, s.interior)
        })
        .collect();
    Verdict::new(pass, parts.join("; "))
}

/// 7: the correction is small and shrinks with `k`.
fn correction(results: &[(usize, Result<ReduceSummary>)]) -> Verdict {
    let rs = match reduced(results) {
        Ok(v) => v,
        Err(v) => return v,
    };
    let ratios: Vec<f64> = rs.iter().map(|s| s.correction_ratio).collect();
    let small = ratios.iter().all(|&r| r <= 0.1);
    let monotone = ratios.windows(2).all(|w| w[1] <= w[0]);
    Verdict::new(small && monotone, format!("ratios {} (<= 0.1, non-increasing: {monotone})", sci(&ratios)))
}

/// 9: the projected operator stays uniformly invertible.
fn invertibility(results: &[(usize, Result<ReduceSummary>)]) -> Verdict {
    let rs = match reduced(results) {
        Ok(v) => v,
        Err(v) => return v,
    };
    let rho: Vec<f64> = rs.iter().map(|s| s.rho_hat).collect();
    let (lo, hi) = rho.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    Verdict::new(lo >= 1e-2 && hi <= 2.0 * lo, format!("rho_hat {rho:.4?} (>= 1e-2, max/min {:.3} <= 2)", hi / lo))
}

/// 8: Newton-refined ring solutions.
fn refined(solved: &[(usize, Result<SolveReport>)]) -> Verdict {
    let mut pass = true;
    let parts: Vec<String> = solved
        .iter()
        .map(|(k, r)| match r {
            Ok(s) => {
                let positive = s.min_value >= -1e-8 * s.max_value;
                let ok = s.pde_residual <= 1e-6 && positive && s.non_radial && s.rotation_defect <= 1e-8;
                pass &= ok;
                format!(
                    "k={k}: residual {:.2e} (<= 1e-6), min/max {:.2e}, non-radial {}, rotation defect {:.2e} (<= 1e-8)",
                    s.pde_residual,
                    s.min_value / s.max_value,
                    s.non_radial,
                    s.rotation_defect
                )
            }
            Err(e) => {
                pass = false;
                format!("k={k}: error: {e}")
            }
        })
        .collect();
    Verdict::new(pass, parts.join("; "))
}

fn random_field(grid: GridSpec, rng: &mut ChaCha8Rng) -> Field {
    let terms: Vec<(Vec<f64>, f64, f64)> = (0..6)
        .map(|_| {
            let c: Vec<f64> = (0..grid.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            (c, rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0))
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

/// 10: operator unit suite.
fn operators() -> Result<Verdict> {
    let s = 0.5;
    let grid = make_grid(2, PI, 32)?;
    let mut plane = 0.0f64;
    for (a, b) in [(1.0, 0.0), (3.0, 4.0), (7.0, -2.0), (0.0, 15.0)] {
        let u = Field::from_fn(grid, |x| (a * x[0] + b * x[1]).cos());
        let mu = (a * a + b * b) as f64;
        let lap = fractional_laplacian(&u, s)?;
        let op = apply_operator(&u, s)?;
        for ((&v, &l), &o) in u.values().iter().zip(lap.values()).zip(op.values()) {
            plane = plane.max((l - mu.powf(s) * v).abs()).max((o - (mu.powf(s) + 1.0) * v).abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let big = make_grid(2, 10.0, 64)?;
    let mut adjoint = 0.0f64;
    for _ in 0..5 {
        let (u, v) = (random_field(big, &mut rng), random_field(big, &mut rng));
        for f in [fractional_laplacian, apply_operator, apply_resolvent] {
            let (a, b) = (f(&u, s)?.dot(&v), u.dot(&f(&v, s)?));
            adjoint = adjoint.max((a - b).abs() / a.abs().max(b.abs()));
        }
    }

    let params = ProblemParams::new(2, s, 2.0)?;
    let model = PotentialModel::smooth_algebraic(0.05, 1.0)?;
    let mut fd = 0.0f64;
    for _ in 0..10 {
        let (u, v) = (random_field(big, &mut rng), random_field(big, &mut rng));
        let eps = 1e-5;
        let ip = energy(&u.add(&v.scaled(eps)), &model, &params)?.total;
        let im = energy(&u.sub(&v.scaled(eps)), &model, &params)?.total;
        let numeric = (ip - im) / (2.0 * eps);
        let exact = gradient(&u, &model, &params)?.dot(&v);
        fd = fd.max((numeric - exact).abs() / exact.abs());
    }

    let mut ring = 0.0f64;
    for k in 2..=256usize {
        for r in [0.7, 5.0, 40.0] {
            let (a, b) = (ring_sum(3.0, k, r), ring_sum_direct(3.0, k, r)?);
            ring = ring.max((a - b).abs() / b);
        }
    }
    Ok(Verdict::new(
        plane <= 1e-12 && adjoint <= 1e-10 && fd <= 1e-6 && ring <= 1e-12,
        format!(
            "plane waves {plane:.1e} (<= 1e-12), self-adjointness {adjoint:.1e} (<= 1e-10), \
             gradient vs differences {fd:.1e} (<= 1e-6), ring sums {ring:.1e} (<= 1e-12)"
        ),
    ))
}

fn main() -> ExitCode {
    let cfg = RunConfig::default();
    let mut verdicts: Vec<(usize, Verdict)> = vec![
        (1, from_result(lorentzian())),
        (2, from_result(tail_slope())),
        (10, from_result(operators())),
    ];
    match run_ground(&cfg) {
        Err(e) => {
            for n in 3..=9 {
                verdicts.push((n, Verdict::failed(format!("canonical ground state: {e}"))));
            }
        }
        Ok((gs, _)) => {
            verdicts.push((3, from_result(kernel(&gs))));
            verdicts.push((4, from_result(interaction(&gs))));
            let scan = run_energy_scan(&cfg, &gs, 1);
            verdicts.push((5, scan.as_ref().map_or_else(Verdict::failed, expansion)));
            match scan.map(|s| s.fit) {
                Ok(Some(fit)) => {
                    let results: Vec<(usize, Result<ReduceSummary>)> =
                        cfg.k_list.iter().copied().zip(run_reduce(&cfg, &gs, &fit, 1)).collect();
                    verdicts.push((6, maximizer(&results)));
                    verdicts.push((7, correction(&results)));
                    verdicts.push((9, invertibility(&results)));
                    let ready: Vec<ReduceSummary> = results.iter().filter_map(|(_, r)| r.as_ref().ok().cloned()).collect();
                    let solved: Vec<(usize, Result<SolveReport>)> =
                        ready.iter().map(|s| s.k).zip(run_solve(&cfg, &gs, &ready, 1)).collect();
                    verdicts.push((8, refined(&solved)));
                }
                other => {
                    let why = match other {
                        Err(e) => e.to_string(),
                        _ => "no expansion fit".into(),
                    };
                    for n in 6..=9 {
                        verdicts.push((n, Verdict::failed(&why)));
                    }
                }
            }
        }
    }
    verdicts.sort_by_key(|(n, _)| *n);
    let mut all = true;
    for (n, v) in &verdicts {
        all &= v.pass;
        println!("criterion {n:>2}: {}  {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
