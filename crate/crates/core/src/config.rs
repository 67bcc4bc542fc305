//! Run configuration: flat dotted `key = value` text or nested JSON, command
//! line overrides, validation, and the hash stamped on every artifact.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::configuration::RadiusWindow;
use crate::energy::{PotentialForm, PotentialModel};
use crate::error::{Error, Result};
use crate::ground_state::ProblemParams;
use crate::grid::GridSpec;
use crate::io::parse_key_values;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Petviashvili stopping threshold.
    pub ground: f64,
    /// Outer fixed-point threshold on successive `|omega|_s` changes.
    pub correction: f64,
    /// Relative PDE residual at which Newton stops.
    pub newton: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundKnobs {
    pub max_iters: usize,
}

/// Ring-energy scans of the plain ansatz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanKnobs {
    /// Radii per `k`, equispaced over the estimated window.
    pub points: usize,
    pub spacing: f64,
    /// Box half-width over the window's upper radius.
    pub box_ratio: f64,
    /// Explicit radius range; `r_upper = 0` selects the estimated window.
    pub r_lower: f64,
    pub r_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceKnobs {
    /// Coarse radii before golden-section refinement.
    pub grid_points: usize,
    pub max_outer: usize,
    /// Lanczos steps of the invertibility estimate.
    pub ritz_steps: usize,
    pub spacing: f64,
    pub box_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveKnobs {
    pub spacing: f64,
    /// Box half-width over the ring radius.
    pub box_ratio: f64,
    pub max_iters: usize,
    pub inner_tol: f64,
    /// Secant steps locating the radius where the radial multiplier vanishes.
    pub secant_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemParams,
    pub potential: PotentialModel,
    /// Ground-state grid.
    pub grid: GridSpec,
    pub k_list: Vec<usize>,
    pub window_alpha: f64,
    pub tolerances: Tolerances,
    pub output_dir: PathBuf,
    pub ground: GroundKnobs,
    pub scan: ScanKnobs,
    pub reduce: ReduceKnobs,
    pub solve: SolveKnobs,
}

impl Default for RunConfig {
    /// The canonical two-dimensional run.
    fn default() -> Self {
        Self {
            problem: ProblemParams { dim: 2, s: 0.5, p: 2.0 },
            potential: PotentialModel { amplitude: 0.05, decay: 1.0, form: PotentialForm::SmoothAlgebraic },
            grid: GridSpec::new(2, 60.0, 1728).expect("canonical grid"),
            k_list: vec![6, 8, 10],
            window_alpha: 0.3,
            tolerances: Tolerances { ground: 1e-11, correction: 1e-9, newton: 1e-6 },
            output_dir: PathBuf::from("out"),
            ground: GroundKnobs { max_iters: 2000 },
            scan: ScanKnobs { points: 13, spacing: 0.125, box_ratio: 3.0, r_lower: 0.0, r_upper: 0.0 },
            reduce: ReduceKnobs { grid_points: 7, max_outer: 40, ritz_steps: 40, spacing: 0.125, box_ratio: 3.0 },
            solve: SolveKnobs { spacing: 1.0 / 15.0, box_ratio: 3.3, max_iters: 12, inner_tol: 1e-6, secant_iters: 8 },
        }
    }
}

impl RunConfig {
    /// Parses dotted text, or JSON when the first non-blank byte is `{`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            let mut flat = BTreeMap::new();
            flatten(&value, "", &mut flat);
            Self::from_pairs(flat.into_iter().collect())
        } else {
            let pairs = parse_key_values(text).map_err(|e| Error::Config(e.to_string()))?;
            Self::from_pairs(pairs)
        }
    }

    /// Starts from the defaults and applies `pairs` in order.
    pub fn from_pairs(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&pairs)?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides on top of this config.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let mut value = serde_json::to_value(&*self)?;
        for (key, raw) in pairs {
            set_dotted(&mut value, key, raw)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    /// Parses `key=value` override strings.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        let pairs = overrides
            .iter()
            .map(|o| {
                o.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.apply(&pairs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.problem.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.potential.validate().map_err(|e| Error::Config(e.to_string()))?;
        GridSpec::new(self.grid.dim(), self.grid.half_width(), self.grid.points_per_dim())
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.grid.dim() != self.problem.dim {
            return bad(format!("grid dimension {} differs from problem.dim {}", self.grid.dim(), self.problem.dim));
        }
        if !self.potential.is_constant() {
            let q = self.problem.tail_exponent();
            let m = self.potential.decay;
            let lower = q / (q + 1.0);
            if !(m > lower && m < q) {
                return Err(Error::Config(Error::ExponentWindow { m, lower, upper: q }.to_string()));
            }
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return bad("k_list needs at least one positive entry".into());
        }
        if !(self.window_alpha > 0.0 && self.window_alpha.is_finite()) {
            return bad(format!("window_alpha must be positive, got {}", self.window_alpha));
        }
        let t = &self.tolerances;
        for (name, v) in [("ground", t.ground), ("correction", t.correction), ("newton", t.newton)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("tolerances.{name} must lie in (0, 1), got {v}"));
            }
        }
        if self.scan.points < 3 {
            return bad(format!("scan.points must be at least 3, got {}", self.scan.points));
        }
        if self.scan.r_upper != 0.0 && !(self.scan.r_lower > 0.0 && self.scan.r_upper > self.scan.r_lower) {
            return bad(format!(
                "scan radii need 0 < r_lower < r_upper, got [{}, {}]",
                self.scan.r_lower, self.scan.r_upper
            ));
        }
        if self.reduce.grid_points < 7 {
            return bad(format!("reduce.grid_points must be at least 7, got {}", self.reduce.grid_points));
        }
        if self.reduce.ritz_steps < 5 {
            return bad(format!("reduce.ritz_steps must be at least 5, got {}", self.reduce.ritz_steps));
        }
        if !(self.solve.inner_tol > 0.0 && self.solve.inner_tol < 1.0) {
            return bad(format!("solve.inner_tol must lie in (0, 1), got {}", self.solve.inner_tol));
        }
        for (name, v) in [
            ("scan.spacing", self.scan.spacing),
            ("scan.box_ratio", self.scan.box_ratio),
            ("reduce.spacing", self.reduce.spacing),
            ("reduce.box_ratio", self.reduce.box_ratio),
            ("solve.spacing", self.solve.spacing),
            ("solve.box_ratio", self.solve.box_ratio),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        // bumps need a box of at least three ring radii
        for (name, v) in [
            ("scan.box_ratio", self.scan.box_ratio),
            ("reduce.box_ratio", self.reduce.box_ratio),
            ("solve.box_ratio", self.solve.box_ratio),
        ] {
            if v < 3.0 {
                return bad(format!("{name} must be at least 3, got {v}"));
            }
        }
        Ok(())
    }

    /// Sorted dotted `key = value` lines; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut flat = BTreeMap::new();
        flatten(&value, "", &mut flat);
        flat.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`Self::to_text`] without `output_dir`, in hex.
    pub fn hash(&self) -> String {
        let text: String = self.to_text().lines().filter(|l| !l.starts_with("output_dir ")).map(|l| format!("{l}\n")).collect();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Box for the ring-energy scans of one window.
    pub fn scan_grid(&self, window: &RadiusWindow) -> Result<GridSpec> {
        box_grid(self.problem.dim, self.scan.box_ratio * window.upper, self.scan.spacing)
    }

    /// Box for the reduction of one window.
    pub fn reduce_grid(&self, window: &RadiusWindow) -> Result<GridSpec> {
        box_grid(self.problem.dim, self.reduce.box_ratio * window.upper, self.reduce.spacing)
    }

    /// Box for the refinement of a ring of radius `r`.
    pub fn solve_grid(&self, r: f64) -> Result<GridSpec> {
        box_grid(self.problem.dim, self.solve.box_ratio * r, self.solve.spacing)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            parameters: Parameters { problem: self.problem, potential: self.potential, k_list: self.k_list.clone(), window_alpha: self.window_alpha },
            grid: self.grid,
            tolerances: self.tolerances.clone(),
            hash: self.hash(),
        }
    }
}

/// Half-width at least `half_width` whose point count `2L/h` is even with
/// no prime factor above 5, keeping the spacing at most `spacing`.
pub fn box_grid(dim: usize, half_width: f64, spacing: f64) -> Result<GridSpec> {
    let mut n = ((2.0 * half_width / spacing).ceil() as usize).max(8);
    while n % 2 != 0 || !is_smooth(n) {
        n += 1;
    }
    let l = 0.5 * n as f64 * spacing;
    GridSpec::new(dim, l, n)
}

fn is_smooth(mut n: usize) -> bool {
    for f in [2, 3, 5] {
        while n % f == 0 {
            n /= f;
        }
    }
    n == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub problem: ProblemParams,
    pub potential: PotentialModel,
    pub k_list: Vec<usize>,
    pub window_alpha: f64,
}

/// Written by every command next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub parameters: Parameters,
    pub grid: GridSpec,
    pub tolerances: Tolerances,
    pub hash: String,
}

fn flatten(value: &Value, prefix: &str, out: &mut BTreeMap<String, String>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(v, &key, out);
            }
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(scalar_text).collect();
            out.insert(prefix.to_string(), parts.join(","));
        }
        v => {
            out.insert(prefix.to_string(), scalar_text(v));
        }
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() => format!("{f:?}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

/// Replaces the leaf at `key`, typing `raw` after the value it replaces.
fn set_dotted(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let unknown = || Error::Config(format!("unknown config key {key:?}"));
    let mut node = root;
    for part in key.split('.') {
        node = node.as_object_mut().and_then(|m: &mut Map<String, Value>| m.get_mut(part)).ok_or_else(unknown)?;
    }
    let typed = |old: &Value, text: &str| -> Result<Value> {
        let bad = || Error::Config(format!("{key}: cannot read {text:?} as {}", kind_name(old)));
        Ok(match old {
            Value::Number(n) if n.is_u64() => Value::from(text.parse::<u64>().map_err(|_| bad())?),
            Value::Number(_) => {
                let f: f64 = text.parse().map_err(|_| bad())?;
                serde_json::Number::from_f64(f).map(Value::Number).ok_or_else(bad)?
            }
            Value::String(_) => Value::String(text.to_string()),
            Value::Bool(_) => Value::Bool(text.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        })
    };
    *node = match &*node {
        Value::Array(items) => {
            let proto = items.first().cloned().unwrap_or(Value::from(0u64));
            let parts: Vec<&str> = raw.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
            Value::Array(parts.into_iter().map(|p| typed(&proto, p)).collect::<Result<_>>()?)
        }
        Value::Object(_) => return Err(Error::Config(format!("{key:?} names a section, not a value"))),
        old => typed(old, raw)?,
    };
    Ok(())
}

fn kind_name(v: &Value) -> &'static str {
    match v {
        Value::Number(n) if n.is_u64() => "an unsigned integer",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Bool(_) => "a boolean",
        _ => "a value",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&json).unwrap(), cfg);
    }

    #[test]
    fn dotted_keys_and_overrides() {
        let cfg = RunConfig::parse("# comment\nproblem.p = 2.5\nk_list = 4, 12\npotential.form = constant\n").unwrap();
        assert_eq!(cfg.problem.p, 2.5);
        assert_eq!(cfg.k_list, vec![4, 12]);
        assert!(cfg.potential.is_constant());
        let mut cfg = cfg;
        cfg.apply_overrides(&["window_alpha=0.2".into(), "grid.points_per_dim=512".into()]).unwrap();
        assert_eq!(cfg.window_alpha, 0.2);
        assert_eq!(cfg.grid.points_per_dim(), 512);
    }

    #[test]
    fn config_errors() {
        for text in [
            "nope = 1",
            "problem = 3",
            "problem.p = two",
            "k_list = 0",
            "potential.decay = 3.0",
            "potential.amplitude = 1.5",
            "grid.points_per_dim = 15",
            "tolerances.newton = 0",
            "reduce.grid_points = 6",
            "{\"problem\": {\"dim\": 2}, \"bogus\": 1}",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_overrides(&["no_equals".into()]).is_err());
    }

    #[test]
    fn decay_at_the_critical_rate_is_rejected() {
        let err = RunConfig::parse("potential.decay = 3").unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");
    }

    #[test]
    fn hash_ignores_output_dir_and_formatting() {
        let a = RunConfig::default();
        let b = RunConfig::parse("output_dir = elsewhere\nwindow_alpha = 0.30\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::parse("window_alpha = 0.31").unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
        assert_eq!(a.manifest().hash, a.hash());
    }

    #[test]
    fn box_grids_are_fft_friendly() {
        let g = box_grid(2, 36.3, 1.0 / 15.0).unwrap();
        let n = g.points_per_dim();
        assert!(n % 2 == 0 && is_smooth(n));
        assert!(g.half_width() >= 36.3 && g.spacing() <= 1.0 / 15.0 + 1e-15);
        assert!(!is_smooth(14));
    }

    proptest! {
        #[test]
        fn overrides_round_trip(alpha in 0.01f64..1.0, p in 1.1f64..2.9, ks in proptest::collection::vec(1usize..40, 1..5)) {
            let mut cfg = RunConfig::default();
            let list: Vec<String> = ks.iter().map(|k| k.to_string()).collect();
            cfg.apply_overrides(&[format!("window_alpha={alpha:?}"), format!("problem.p={p:?}"), format!("k_list={}", list.join(","))]).unwrap();
            prop_assert_eq!(cfg.window_alpha, alpha);
            prop_assert_eq!(&cfg.k_list, &ks);
            prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }
}
