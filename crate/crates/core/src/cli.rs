//! Command-line verbs. Each stage reads the artifacts of the previous one
//! from the output directory and refuses artifacts stamped with another
//! config hash.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::RunConfig;
use crate::configuration::ring_centers;
use crate::energy::ExpansionFit;
use crate::error::{Error, Result};
use crate::ground_state::GroundState;
use crate::io;
use crate::pipeline::{self, GroundReport, ReduceSummary, ScanRow};
use crate::reduction::SolveReport;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_MISSING: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "fracbump", about = "Ground states and ring multi-bump solutions of fractional Schrodinger equations")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
    /// Dotted key = value file, or JSON.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-k jobs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// `key=value`, applied after the config file.
    #[arg(long = "override", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Verb {
    /// Ground state and its validation report.
    Ground,
    /// Ring-energy scans and the expansion fit.
    EnergyScan,
    /// Reduced-energy maximization per k.
    Reduce,
    /// Newton refinement of the reduced solutions.
    Solve,
    /// Cross-stage summary; checks that all artifacts share the config hash.
    Report,
}

/// Any JSON artifact with the config hash beside its fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    #[serde(flatten)]
    pub body: T,
}

/// Machine-readable failure, printed to stderr as one JSON line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub error: String,
    pub exit_code: i32,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::InvalidGrid(_)
        | Error::ExponentWindow { .. }
        | Error::AlphaTooLarge { .. } => EXIT_CONFIG,
        Error::MissingArtifact(_) | Error::HashMismatch { .. } => EXIT_MISSING,
        _ => EXIT_NUMERICAL,
    }
}

/// Parses `args` (program name first), runs the verb, returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            let report = ErrorReport { error: e.to_string(), exit_code: code };
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            code
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = io::read_text_artifact(path).map_err(|e| match e {
                Error::MissingArtifact(p) => Error::Config(format!("config file {p} not found")),
                e => e,
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if cli.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    Ok(cfg)
}

/// Output layout under the configured directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }
    pub fn ground_dir(&self) -> PathBuf {
        self.root.join("ground")
    }
    pub fn ground_report(&self) -> PathBuf {
        self.ground_dir().join("report.json")
    }
    pub fn scan_dir(&self) -> PathBuf {
        self.root.join("energy_scan")
    }
    pub fn fit(&self) -> PathBuf {
        self.scan_dir().join("fit.json")
    }
    pub fn reduce_dir(&self) -> PathBuf {
        self.root.join("reduce")
    }
    pub fn reduce_summary(&self) -> PathBuf {
        self.reduce_dir().join("summary.json")
    }
    pub fn solve_dir(&self) -> PathBuf {
        self.root.join("solve")
    }
    pub fn solve_summary(&self) -> PathBuf {
        self.solve_dir().join("summary.json")
    }
}

pub const GROUND_STEM: &str = "ground_state";

/// Fitted constants next to the independent single-bump energy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    #[serde(flatten)]
    pub fit: ExpansionFit,
    pub constant_a: f64,
}

/// One entry per `k`: the result or the reason it failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerK<T> {
    pub k: usize,
    pub result: Option<T>,
    pub error: Option<String>,
}

/// Cross-`k` table of the refined solutions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveRow {
    pub k: usize,
    pub r_star: f64,
    pub pde_residual: f64,
    pub correction_ratio: f64,
    pub min_value: f64,
    pub max_value: f64,
    pub non_radial: bool,
    pub rotation_defect: f64,
    pub energy_total: f64,
}

impl SolveRow {
    fn from_report(r: &SolveReport) -> Self {
        Self {
            k: r.k,
            r_star: r.r_star,
            pde_residual: r.pde_residual,
            correction_ratio: r.correction_ratio,
            min_value: r.min_value,
            max_value: r.max_value,
            non_radial: r.non_radial,
            rotation_defect: r.rotation_defect,
            energy_total: r.energy.total,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReduceDocument {
    pub results: Vec<PerK<ReduceSummary>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub solutions: Vec<PerK<SolveRow>>,
    /// Correction ratios in `k_list` order are non-increasing.
    pub correction_ratio_decreasing: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FullReport {
    pub ground: GroundReport,
    pub fit: Option<FitDocument>,
    pub reduce: Option<ReduceDocument>,
    pub solve: Option<SolveSummary>,
}

fn stamp<T>(cfg: &RunConfig, body: T) -> Stamped<T> {
    Stamped { config_hash: cfg.hash(), body }
}

/// Reads a stamped JSON artifact and checks its hash.
pub fn read_stamped<T: DeserializeOwned>(path: &Path, hash: &str) -> Result<T> {
    let doc: Stamped<T> = io::read_json(path)?;
    check_hash(path, &doc.config_hash, hash)?;
    Ok(doc.body)
}

fn check_hash(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::HashMismatch {
            path: path.display().to_string(),
            found: found.to_string(),
            expected: expected.to_string(),
        })
    }
}

fn write_manifest(cfg: &RunConfig, dir: &Path) -> Result<()> {
    io::write_json(&dir.join("manifest.json"), &cfg.manifest())
}

pub fn load_ground(cfg: &RunConfig) -> Result<GroundState> {
    let layout = Layout::new(&cfg.output_dir);
    let (gs, side) = io::read_ground_state(&layout.ground_dir(), GROUND_STEM)?;
    check_hash(&layout.ground_dir().join(format!("{GROUND_STEM}.sidecar")), &side.config_hash, &cfg.hash())?;
    Ok(gs)
}

pub fn execute(cli: &Cli) -> Result<i32> {
    let cfg = load_config(cli)?;
    match cli.verb {
        Verb::Ground => cmd_ground(&cfg),
        Verb::EnergyScan => cmd_energy_scan(&cfg, cli.jobs),
        Verb::Reduce => cmd_reduce(&cfg, cli.jobs),
        Verb::Solve => cmd_solve(&cfg, cli.jobs),
        Verb::Report => cmd_report(&cfg),
    }
}

pub fn cmd_ground(cfg: &RunConfig) -> Result<i32> {
    let layout = Layout::new(&cfg.output_dir);
    let (gs, report) = pipeline::run_ground(cfg)?;
    let hash = cfg.hash();
    io::write_ground_state(&layout.ground_dir(), GROUND_STEM, &gs, &hash)?;
    io::write_json(&layout.ground_report(), &stamp(cfg, &report))?;
    write_manifest(cfg, &layout.ground_dir())?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(EXIT_OK)
}

pub fn cmd_energy_scan(cfg: &RunConfig, jobs: usize) -> Result<i32> {
    let layout = Layout::new(&cfg.output_dir);
    let gs = load_ground(cfg)?;
    let scan = pipeline::run_energy_scan(cfg, &gs, jobs)?;
    let hash = cfg.hash();
    let dir = layout.scan_dir();
    let rows: Vec<Vec<f64>> = scan.rows.iter().map(ScanRow::to_vec).collect();
    io::write_csv(&dir.join("energy_scan.csv"), &hash, &ScanRow::HEADER, &rows)?;
    io::write_csv(&dir.join("ring_sums.csv"), &hash, &["k", "r", "eta", "sum"], &pipeline::ring_sum_rows(cfg, &scan.rows))?;
    if let Some(fit) = scan.fit {
        let doc = FitDocument { fit, constant_a: scan.constant_a };
        io::write_json(&layout.fit(), &stamp(cfg, &doc))?;
        println!("{}", serde_json::to_string(&doc)?);
    }
    write_manifest(cfg, &dir)?;
    Ok(EXIT_OK)
}

pub fn cmd_reduce(cfg: &RunConfig, jobs: usize) -> Result<i32> {
    let layout = Layout::new(&cfg.output_dir);
    let hash = cfg.hash();
    let gs = load_ground(cfg)?;
    let doc: FitDocument = read_stamped(&layout.fit(), &hash)?;
    let results = pipeline::run_reduce(cfg, &gs, &doc.fit, jobs);
    let dir = layout.reduce_dir();
    let mut entries = Vec::new();
    let mut failed = false;
    for (&k, res) in cfg.k_list.iter().zip(results) {
        match res {
            Ok(s) => {
                let rows: Vec<Vec<f64>> =
                    s.samples.iter().map(|x| vec![x.k as f64, x.r, x.f, x.omega_norm]).collect();
                io::write_csv(&dir.join(format!("reduced_k{k}.csv")), &hash, &["k", "r", "F", "omega_norm"], &rows)?;
                let config = ring_centers(k, s.r_hat, cfg.problem.dim)?;
                io::write_json(&dir.join(format!("configuration_k{k}.json")), &stamp(cfg, &config))?;
                entries.push(PerK { k, result: Some(s), error: None });
            }
            Err(e) => {
                failed = true;
                entries.push(PerK { k, result: None, error: Some(e.to_string()) });
            }
        }
    }
    let doc = ReduceDocument { results: entries };
    io::write_json(&layout.reduce_summary(), &stamp(cfg, &doc))?;
    write_manifest(cfg, &dir)?;
    println!("{}", serde_json::to_string(&doc)?);
    Ok(if failed { EXIT_NUMERICAL } else { EXIT_OK })
}

pub fn cmd_solve(cfg: &RunConfig, jobs: usize) -> Result<i32> {
    let layout = Layout::new(&cfg.output_dir);
    let hash = cfg.hash();
    let gs = load_ground(cfg)?;
    let reduced = read_stamped::<ReduceDocument>(&layout.reduce_summary(), &hash)?.results;
    let ready: Vec<ReduceSummary> = reduced.iter().filter_map(|e| e.result.clone()).collect();
    let results = pipeline::run_solve(cfg, &gs, &ready, jobs);
    let dir = layout.solve_dir();
    let mut solutions = Vec::new();
    let mut failed = false;
    for e in reduced.iter().filter(|e| e.result.is_none()) {
        failed = true;
        solutions.push(PerK { k: e.k, result: None, error: Some(format!("reduction failed: {}", e.error.clone().unwrap_or_default())) });
    }
    for (s, res) in ready.iter().zip(results) {
        match res {
            Ok(report) => {
                if let Some(u) = &report.solution {
                    io::write_field(&dir.join(format!("solution_k{}.frbf", s.k)), u)?;
                }
                io::write_json(&dir.join(format!("report_k{}.json", s.k)), &stamp(cfg, &report))?;
                solutions.push(PerK { k: s.k, result: Some(SolveRow::from_report(&report)), error: None });
            }
            Err(e) => {
                failed = true;
                solutions.push(PerK { k: s.k, result: None, error: Some(e.to_string()) });
            }
        }
    }
    solutions.sort_by_key(|e| cfg.k_list.iter().position(|&k| k == e.k));
    let ratios: Vec<f64> = solutions.iter().filter_map(|e| e.result.as_ref().map(|r| r.correction_ratio)).collect();
    let summary = SolveSummary { correction_ratio_decreasing: ratios.windows(2).all(|w| w[1] <= w[0]), solutions };
    io::write_json(&layout.solve_summary(), &stamp(cfg, &summary))?;
    write_manifest(cfg, &dir)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(if failed { EXIT_NUMERICAL } else { EXIT_OK })
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::MissingArtifact(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn cmd_report(cfg: &RunConfig) -> Result<i32> {
    let layout = Layout::new(&cfg.output_dir);
    let hash = cfg.hash();
    let report = FullReport {
        ground: read_stamped(&layout.ground_report(), &hash)?,
        fit: optional(read_stamped(&layout.fit(), &hash))?,
        reduce: optional(read_stamped(&layout.reduce_summary(), &hash))?,
        solve: optional(read_stamped(&layout.solve_summary(), &hash))?,
    };
    io::write_json(&layout.root.join("report.json"), &stamp(cfg, &report))?;
    write_manifest(cfg, &layout.root)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::ExponentWindow { m: 3.0, lower: 0.75, upper: 3.0 }), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::MissingArtifact("x".into())), EXIT_MISSING);
        assert_eq!(exit_code(&Error::Divergence { residual: 1.0 }), EXIT_NUMERICAL);
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["fracbump", "reduce", "--jobs", "3", "--override", "a=1", "--override", "b=2", "--out", "x"]).unwrap();
        assert_eq!(cli.verb, Verb::Reduce);
        assert_eq!(cli.jobs, 3);
        assert_eq!(cli.overrides, vec!["a=1", "b=2"]);
        assert_eq!(cli.out, Some(PathBuf::from("x")));
        assert!(Cli::try_parse_from(["fracbump", "bogus"]).is_err());
        assert!(Cli::try_parse_from(["fracbump", "energy-scan"]).is_ok());
    }

    #[test]
    fn stamped_round_trip() {
        let doc = Stamped { config_hash: "abc".to_string(), body: PerK { k: 6, result: Some(1.5f64), error: None } };
        let text = serde_json::to_string(&doc).unwrap();
        assert!(text.contains("\"config_hash\":\"abc\""));
        let back: Stamped<PerK<f64>> = serde_json::from_str(&text).unwrap();
        assert_eq!(back.body.result, Some(1.5));
    }
}
