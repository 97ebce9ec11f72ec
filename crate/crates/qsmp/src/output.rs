//! Report files: CSV tables, `report.json` and `manifest.json`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// One CSV cell. Floats are written with 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Self::Int(v) => v.to_string(),
            Self::Float(v) => format_float(*v),
            Self::Text(s) => s.clone(),
            Self::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Self::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Self::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Self::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Self::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Self::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Self::Text(v)
    }
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// A named CSV file with fixed columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    /// File stem; written as `<name>.csv`.
    pub name: String,
    /// What the table supports.
    pub certifies: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(name: &str, certifies: &str, header: &[S]) -> Self {
        Self {
            name: name.into(),
            certifies: certifies.into(),
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width of {}", self.name);
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// One verdict. Checks with `gating = false` are reported but do not
/// decide the exit status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub certifies: String,
    pub pass: bool,
    pub gating: bool,
    pub detail: serde_json::Value,
}

impl Check {
    pub fn gating(name: &str, certifies: &str, pass: bool, detail: serde_json::Value) -> Self {
        Self {
            name: name.into(),
            certifies: certifies.into(),
            pass,
            gating: true,
            detail,
        }
    }

    pub fn informational(name: &str, certifies: &str, pass: bool, detail: serde_json::Value) -> Self {
        Self {
            gating: false,
            ..Self::gating(name, certifies, pass, detail)
        }
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub checks: Vec<Check>,
    pub data: serde_json::Value,
    pub tables: Vec<CsvTable>,
}

impl ExperimentOutput {
    pub fn pass(&self) -> bool {
        self.checks.iter().filter(|c| c.gating).all(|c| c.pass)
    }

    pub fn report_json(&self, config: &ExperimentConfig) -> serde_json::Value {
        serde_json::json!({
            "kind": config.kind,
            "model": config.model.name(),
            "pass": self.pass(),
            "checks": self.checks,
            "data": self.data,
        })
    }
}

/// Hash of `bytes` as a git blob object (`"blob <len>\0" + bytes`), SHA-256.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub certifies: String,
    pub bytes: usize,
    pub hash: String,
}

fn to_pretty(value: &impl Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report serializes");
    out.push(b'\n');
    out
}

/// Writes the tables, `report.json` and `manifest.json` into `dir` and
/// returns the written paths. Contents depend only on `config` and `output`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, output: &ExperimentOutput) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    log::info!("writing reports to {}", dir.display());
    let mut entries = Vec::new();
    let mut written = Vec::new();
    let mut emit = |file: String, certifies: String, bytes: Vec<u8>| -> io::Result<()> {
        let path = dir.join(&file);
        fs::write(&path, &bytes)?;
        entries.push(ManifestEntry {
            file,
            certifies,
            bytes: bytes.len(),
            hash: git_blob_hash(&bytes),
        });
        written.push(path);
        Ok(())
    };
    for table in &output.tables {
        emit(format!("{}.csv", table.name), table.certifies.clone(), table.to_bytes())?;
    }
    emit(
        "report.json".into(),
        "verdicts of all checks of this experiment".into(),
        to_pretty(&output.report_json(config)),
    )?;

    let echo = config.to_toml();
    let manifest = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "kind": config.kind,
        "pass": output.pass(),
        "config_hash": git_blob_hash(echo.as_bytes()),
        "config_toml": echo,
        "config": config,
        "files": entries,
    });
    let path = dir.join("manifest.json");
    fs::write(&path, to_pretty(&manifest))?;
    written.push(path);
    Ok(written)
}
