//! CSV tables, JSON rendering, atomic writes and the run manifest.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

use crate::estimate::Band;
use crate::extremes::DoublingCertificate;
use crate::format::real;
use crate::Result;

pub const CSV_SCHEMA: &str = "# brwlab-schema v1";
pub const MANIFEST_SCHEMA: &str = "brwlab-manifest v1";

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Int(i128),
    Real(f64),
    Text(String),
    Empty,
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::Int(i) => i.to_string(),
            Field::Real(x) => real(*x),
            Field::Text(s) => {
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
            Field::Empty => String::new(),
        }
    }
}

impl From<f64> for Field {
    fn from(x: f64) -> Self {
        Field::Real(x)
    }
}
impl From<usize> for Field {
    fn from(x: usize) -> Self {
        Field::Int(x as i128)
    }
}
impl From<u64> for Field {
    fn from(x: u64) -> Self {
        Field::Int(x as i128)
    }
}
impl From<u128> for Field {
    fn from(x: u128) -> Self {
        Field::Text(x.to_string())
    }
}
impl From<bool> for Field {
    fn from(b: bool) -> Self {
        Field::Int(b as i128)
    }
}
impl From<&str> for Field {
    fn from(s: &str) -> Self {
        Field::Text(s.into())
    }
}
impl From<String> for Field {
    fn from(s: String) -> Self {
        Field::Text(s)
    }
}
impl<T: Into<Field>> From<Option<T>> for Field {
    fn from(x: Option<T>) -> Self {
        x.map_or(Field::Empty, Into::into)
    }
}

/// A CSV table rendered with the schema header line.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(CSV_SCHEMA);
        s.push('\n');
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(Field::render).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Pretty JSON with reals in 17 significant digits. Non-finite reals
/// become `null`.
struct RealFormatter {
    inner: PrettyFormatter<'static>,
}

impl Formatter for RealFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(real(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        RealFormatter {
            inner: PrettyFormatter::new(),
        },
    );
    value
        .serialize(&mut ser)
        .map_err(|e| crate::Error::Io(format!("json: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("utf-8 json"))
}

/// Write `contents` to a temporary sibling and rename it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| crate::Error::Io(format!("`{}` has no file name", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp.{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(Into::into)
}

/// Sibling path with `suffix` replacing the extension, e.g.
/// `tail.csv` -> `tail.manifest.json`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandEntry {
    pub min: f64,
    pub max: f64,
    pub ratio: f64,
    pub limit: Option<f64>,
    pub pass: Option<bool>,
}

impl BandEntry {
    pub fn of(band: Band, limit: Option<f64>) -> Self {
        let ratio = band.ratio();
        BandEntry {
            min: band.min,
            max: band.max,
            ratio,
            limit,
            pass: limit.map(|l| band.min > 0.0 && ratio <= l),
        }
    }
}

/// Replicate count behind one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellEntry {
    pub row: usize,
    pub cell: BTreeMap<String, String>,
    pub reps: u64,
}

/// Everything needed to trace an output back to its inputs. The wall-clock
/// time goes to a separate timing file so that the manifest itself is
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub schema: String,
    pub code_version: String,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub experiment: String,
    pub h: Option<f64>,
    pub z: Option<f64>,
    pub certificates: Vec<DoublingCertificate>,
    pub bands: BTreeMap<String, BandEntry>,
    pub cells: Vec<CellEntry>,
    pub outputs: Vec<String>,
    pub timing: Option<String>,
    pub results: serde_json::Value,
}

impl Manifest {
    pub fn new(config: &super::ExperimentConfig) -> Self {
        let entries = config.canonical_entries();
        let text: String = entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        Manifest {
            schema: MANIFEST_SCHEMA.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: sha256_hex(&text),
            config: entries.into_iter().collect(),
            experiment: config.kind.to_string(),
            h: None,
            z: None,
            certificates: Vec::new(),
            bands: BTreeMap::new(),
            cells: Vec::new(),
            outputs: Vec::new(),
            timing: None,
            results: serde_json::Value::Null,
        }
    }

    pub fn cell(&mut self, row: usize, coords: &[(&str, String)], reps: u64) {
        self.cells.push(CellEntry {
            row,
            cell: coords.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            reps,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub config_hash: String,
    pub wall_clock_seconds: f64,
    pub workers: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_schema_line_and_reals() {
        let mut t = Table::new(&["a", "b", "c"]);
        t.push(vec![1usize.into(), 0.1.into(), "x,y".into()]);
        assert_eq!(t.render(), "# brwlab-schema v1\na,b,c\n1,0.10000000000000001,\"x,y\"\n");
    }

    #[test]
    fn json_reals_have_17_digits() {
        let s = to_json(&serde_json::json!({"x": 0.1, "n": 3})).unwrap();
        assert!(s.contains("0.10000000000000001"), "{s}");
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["x"].as_f64(), Some(0.1));
        assert_eq!(to_json(&f64::INFINITY).unwrap(), "null\n");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.csv");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert_eq!(sibling(&p, "manifest.json"), dir.path().join("o.manifest.json"));
    }
}
