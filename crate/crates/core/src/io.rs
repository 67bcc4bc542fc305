//! Persistence: the FRBF field format, ground-state sidecars, CSV tables and
//! JSON documents. Every text artifact carries the hash of the run config.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ground_state::{GroundState, ProblemParams};
use crate::grid::{Field, GridSpec};

const MAGIC: &[u8; 4] = b"FRBF";
const VERSION: u32 = 1;
const PAYLOAD_REAL64: u32 = 0;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 4;

/// Serializes a field: header, then `n^N` little-endian `f64` in row-major order.
pub fn encode_field(u: &Field) -> Vec<u8> {
    let g = u.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * g.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(g.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(g.points_per_dim() as u32).to_le_bytes());
    out.extend_from_slice(&g.half_width().to_le_bytes());
    out.extend_from_slice(&PAYLOAD_REAL64.to_le_bytes());
    for v in u.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<Field> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("field file shorter than its header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic, expected FRBF".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = word(8) as usize;
    let n = word(12) as usize;
    let l = f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let kind = word(24);
    if kind != PAYLOAD_REAL64 {
        return Err(Error::Format(format!("unsupported payload kind {kind}")));
    }
    let grid = GridSpec::new(dim, l, n).map_err(|e| Error::Format(e.to_string()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 8 * grid.len() {
        return Err(Error::Format(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            8 * grid.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Field::from_values(grid, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_field(path: &Path, u: &Field) -> Result<()> {
    write_atomic(path, &encode_field(u))
}

pub fn read_field(path: &Path) -> Result<Field> {
    let bytes = read_artifact(path)?;
    decode_field(&bytes)
}

/// Reads a file, mapping a missing file to [`Error::MissingArtifact`].
pub fn read_artifact(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.display().to_string()),
        _ => Error::Io(e),
    })
}

pub fn read_text_artifact(path: &Path) -> Result<String> {
    String::from_utf8(read_artifact(path)?)
        .map_err(|_| Error::Format(format!("{} is not UTF-8", path.display())))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Scalars written next to a stored ground state.
#[derive(Debug, Clone, PartialEq)]
pub struct Sidecar {
    pub params: ProblemParams,
    pub peak: f64,
    pub mass_sq: f64,
    pub nonlinear_mass: f64,
    pub tail_coefficient: f64,
    pub tail_exponent: f64,
    pub residual_norm: f64,
    pub config_hash: String,
}

impl Sidecar {
    pub fn from_ground_state(gs: &GroundState, config_hash: &str) -> Self {
        Self {
            params: gs.params,
            peak: gs.peak,
            mass_sq: gs.mass_sq,
            nonlinear_mass: gs.nonlinear_mass,
            tail_coefficient: gs.profile.tail_coefficient,
            tail_exponent: gs.profile.tail_exponent,
            residual_norm: gs.residual_norm,
            config_hash: config_hash.to_string(),
        }
    }

    /// `key = value` lines; floats use the shortest round-tripping form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        line("N", self.params.dim.to_string());
        line("s", format!("{:?}", self.params.s));
        line("p", format!("{:?}", self.params.p));
        line("peak", format!("{:?}", self.peak));
        line("mass_sq", format!("{:?}", self.mass_sq));
        line("nonlinear_mass", format!("{:?}", self.nonlinear_mass));
        line("tail_coefficient", format!("{:?}", self.tail_coefficient));
        line("tail_exponent", format!("{:?}", self.tail_exponent));
        line("residual_norm", format!("{:?}", self.residual_norm));
        line("config_hash", self.config_hash.clone());
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_key_values(text)?;
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("sidecar lacks key {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Format(format!("sidecar key {k} is not a number")))
        };
        let dim = get("N")?
            .parse()
            .map_err(|_| Error::Format("sidecar key N is not an integer".into()))?;
        Ok(Self {
            params: ProblemParams::new(dim, num("s")?, num("p")?)?,
            peak: num("peak")?,
            mass_sq: num("mass_sq")?,
            nonlinear_mass: num("nonlinear_mass")?,
            tail_coefficient: num("tail_coefficient")?,
            tail_exponent: num("tail_exponent")?,
            residual_norm: num("residual_norm")?,
            config_hash: get("config_hash").unwrap_or("").to_string(),
        })
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected key = value", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Writes a ground state as `<stem>.frbf`, `<stem>.sidecar` and
/// `<stem>_profile.csv`.
pub fn write_ground_state(dir: &Path, stem: &str, gs: &GroundState, config_hash: &str) -> Result<()> {
    write_field(&dir.join(format!("{stem}.frbf")), &gs.field)?;
    let side = Sidecar::from_ground_state(gs, config_hash);
    write_atomic(&dir.join(format!("{stem}.sidecar")), side.to_text().as_bytes())?;
    let rows: Vec<Vec<f64>> = gs
        .profile
        .radii
        .iter()
        .zip(&gs.profile.values)
        .map(|(r, v)| vec![*r, *v])
        .collect();
    write_csv(&dir.join(format!("{stem}_profile.csv")), config_hash, &["radius", "value"], &rows)
}

/// Loads a stored ground state and rebuilds its derived quantities.
pub fn read_ground_state(dir: &Path, stem: &str) -> Result<(GroundState, Sidecar)> {
    let side = Sidecar::parse(&read_text_artifact(&dir.join(format!("{stem}.sidecar")))?)?;
    let field = read_field(&dir.join(format!("{stem}.frbf")))?;
    let gs = GroundState::from_field(side.params, field, side.residual_norm.max(f64::MIN_POSITIVE), 0)?;
    Ok((gs, side))
}

/// CSV with a leading `# config_hash = ...` comment, then the header row.
pub fn write_csv(path: &Path, config_hash: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut buf = format!("# config_hash = {config_hash}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(csv_error)?;
        for row in rows {
            w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(csv_error)?;
        }
        w.flush()?;
    }
    write_atomic(path, &buf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub config_hash: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("table has no column {name}")))?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let text = read_text_artifact(path)?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let config_hash = first
        .strip_prefix("# config_hash = ")
        .ok_or_else(|| Error::Format(format!("{} lacks the config hash line", path.display())))?
        .trim()
        .to_string();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("bad number {v}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { config_hash, header, rows })
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_artifact(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let g = make_grid(2, 3.5, 8).unwrap();
        let u = Field::from_fn(g, |x| x[0] - 2.0 * x[1]);
        let b = encode_field(&u);
        assert_eq!(&b[..4], b"FRBF");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 8);
        assert_eq!(f64::from_le_bytes(b[16..24].try_into().unwrap()), 3.5);
        assert_eq!(u32::from_le_bytes(b[24..28].try_into().unwrap()), 0);
        assert_eq!(b.len(), 28 + 8 * 64);
        assert_eq!(f64::from_le_bytes(b[28..36].try_into().unwrap()), u.values()[0]);
    }

    #[test]
    fn rejects_corrupt_fields() {
        let g = make_grid(1, 1.0, 8).unwrap();
        let mut b = encode_field(&Field::zeros(g));
        assert!(decode_field(&b[..20]).is_err());
        b.pop();
        assert!(matches!(decode_field(&b), Err(Error::Format(_))));
        let mut c = encode_field(&Field::zeros(g));
        c[0] = b'X';
        assert!(decode_field(&c).is_err());
    }

    #[test]
    fn missing_file_is_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_field(&dir.path().join("nope.frbf")), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn sidecar_round_trip() {
        let s = Sidecar {
            params: ProblemParams::new(2, 0.5, 2.0).unwrap(),
            peak: 5.731,
            mass_sq: 10.69,
            nonlinear_mass: 32.08,
            tail_coefficient: 1.6 + 1e-13,
            tail_exponent: 3.0,
            residual_norm: 1e-11,
            config_hash: "abc".into(),
        };
        let text = s.to_text();
        assert!(text.starts_with("N = 2\ns = 0.5\np = 2.0\n"));
        assert_eq!(Sidecar::parse(&text).unwrap(), s);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![vec![1.0, 0.1 + 0.2], vec![2.0, -1e-300]];
        write_csv(&path, "h1", &["k", "sum"], &rows).unwrap();
        let t = read_csv(&path).unwrap();
        assert_eq!(t.config_hash, "h1");
        assert_eq!(t.header, vec!["k", "sum"]);
        assert_eq!(t.rows, rows);
        assert_eq!(t.column("sum").unwrap(), vec![0.1 + 0.2, -1e-300]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn field_round_trip_is_exact(seed in any::<u64>(), l in 0.1f64..1e3) {
            let g = make_grid(2, l, 8).unwrap();
            let vals = crate::krylov::probe_vector(64, seed).iter().map(|v| v * 1e7).collect();
            let u = Field::from_values(g, vals).unwrap();
            let back = decode_field(&encode_field(&u)).unwrap();
            prop_assert_eq!(back.grid(), u.grid());
            prop_assert!(back.values() == u.values());
        }
    }
}
