//! Report output. Every subcommand writes a long-format CSV and a JSON
//! mirror into the output directory. Both carry only deterministic content,
//! so a rerun with the same seed and inputs reproduces them byte for byte.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "repalign";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Bumped whenever a report layout changes.
pub const REPORT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reproducibility {
    pub tool: &'static str,
    pub version: &'static str,
    pub report_format: u32,
    pub seed: u64,
    /// SHA-256 of the canonical JSON encoding of the effective configuration.
    pub config_hash: String,
}

impl Reproducibility {
    pub fn new<C: Serialize>(seed: u64, config: &C) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            report_format: REPORT_FORMAT,
            seed,
            config_hash: config_hash(config),
        }
    }
}

pub fn config_hash<C: Serialize>(config: &C) -> String {
    let bytes = serde_json::to_vec(config).expect("configurations serialize");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Serialize)]
struct Envelope<'a, C, R> {
    command: &'a str,
    reproducibility: &'a Reproducibility,
    config: &'a C,
    results: &'a R,
}

/// Collects rows for one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Formats a float with the shortest representation that round-trips.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:?}")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

pub struct ReportWriter {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl ReportWriter {
    pub fn create(dir: &Path) -> Result<Self, ReportError> {
        fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.into(), source })?;
        Ok(Self { dir: dir.into(), written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<PathBuf, ReportError> {
        let path = self.path(name);
        let err = |source| ReportError::Csv { path: path.clone(), source };
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(&table.header).map_err(err)?;
        for row in &table.rows {
            w.write_record(row).map_err(err)?;
        }
        w.flush().map_err(|source| ReportError::Io { path: path.clone(), source })?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn json<C: Serialize, R: Serialize>(
        &mut self,
        name: &str,
        command: &str,
        reproducibility: &Reproducibility,
        config: &C,
        results: &R,
    ) -> Result<PathBuf, ReportError> {
        let path = self.path(name);
        let envelope = Envelope { command, reproducibility, config, results };
        let mut text = serde_json::to_string_pretty(&envelope).expect("reports serialize");
        text.push('\n');
        fs::write(&path, text).map_err(|source| ReportError::Io { path: path.clone(), source })?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Records a file produced outside the writer (for the summary line).
    pub fn note(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        #[derive(Serialize)]
        struct C {
            a: u32,
            b: &'static str,
        }
        let h = config_hash(&C { a: 1, b: "x" });
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash(&C { a: 1, b: "x" }));
        assert_ne!(h, config_hash(&C { a: 2, b: "x" }));
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(1.0), "1.0");
    }
}
