//! CSV tables and the JSON run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// A long-format table; cells are already rendered.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(name: &str, header: &[&str]) -> Self {
        CsvTable {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I, S>(&mut self, row: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        let row: Vec<String> = row.into_iter().map(|c| c.to_string()).collect();
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parses one column as numbers.
    pub fn numbers(&self, name: &str) -> Vec<f64> {
        let Some(c) = self.column(name) else {
            return Vec::new();
        };
        self.rows
            .iter()
            .map(|r| r[c].parse().unwrap_or(f64::NAN))
            .collect()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::InternalInconsistency(format!("csv encoding failed: {e}"));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InternalInconsistency(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }
}

/// Provenance written next to every result set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub kind: String,
    pub seed: u64,
    /// `config`, `cli` or `default`.
    pub seed_source: String,
    pub config_sha256: String,
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,
    pub kernel: String,
    pub rho: f64,
    pub n_grid: Vec<usize>,
    pub wall_seconds: f64,
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn for_config(cfg: &ExperimentConfig, seed_source: &str) -> Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            kind: cfg.kind.as_str().to_string(),
            seed: cfg.seed(),
            seed_source: seed_source.to_string(),
            config_sha256: config_hash(cfg)?,
            threads: rayon::current_num_threads(),
            regime: cfg.regime.map(|r| {
                serde_json::to_value(r)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default()
            }),
            kernel: cfg.kernel()?.to_string(),
            rho: cfg.rho,
            n_grid: cfg.n_grid.clone(),
            wall_seconds: 0.0,
            summary: serde_json::Value::Null,
        })
    }
}

/// SHA-256 of the canonical TOML rendering of `cfg`.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let digest = Sha256::digest(cfg.to_toml()?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub tables: Vec<CsvTable>,
    pub manifest: RunManifest,
}

impl ExperimentOutput {
    pub fn table(&self, name: &str) -> Option<&CsvTable> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Writes `<name>.csv` for every table, `manifest.json` and the resolved
/// `config.toml` into `dir`, creating it if needed. Returns the written paths.
pub fn emit_results(dir: &Path, output: &ExperimentOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for t in &output.tables {
        let path = dir.join(format!("{}.csv", t.name));
        t.write(&path)?;
        written.push(path);
    }
    let path = dir.join("config.toml");
    fs::write(&path, output.config.to_toml()?).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&output.manifest)
        .map_err(|e| Error::InternalInconsistency(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Shortest round-trip rendering, so equal values give equal bytes.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
