//! Long-format CSV tables and the run manifest.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::experiment::scenario::Scenario;

pub const CSV_HEADER: &str = "sweep_var,sweep_value,algorithm,metric,value,stderr";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub algorithm: String,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
}

impl CsvRow {
    pub fn new(sweep_var: &str, sweep_value: f64, algorithm: &str, metric: &str, value: f64, stderr: f64) -> Self {
        CsvRow {
            sweep_var: sweep_var.to_string(),
            sweep_value,
            algorithm: algorithm.to_string(),
            metric: metric.to_string(),
            value,
            stderr,
        }
    }
}

pub fn to_csv(rows: &[CsvRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.sweep_var, r.sweep_value, r.algorithm, r.metric, r.value, r.stderr
        );
    }
    s
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    std::fs::write(path, to_csv(rows))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub drops: usize,
    pub workers: usize,
    pub git_revision: String,
    pub crate_version: String,
    pub outputs: Vec<String>,
}

/// SHA-256 of the canonical TOML form of the scenario.
pub fn config_hash(s: &Scenario) -> String {
    let digest = Sha256::digest(s.to_toml().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut acc, b| {
        let _ = write!(acc, "{b:02x}");
        acc
    })
}

pub fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

impl Manifest {
    pub fn new(command: &str, s: &Scenario, workers: usize, outputs: Vec<String>) -> Self {
        Manifest {
            command: command.to_string(),
            config_hash: config_hash(s),
            seed: s.seed,
            drops: s.drops,
            workers,
            git_revision: git_revision(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let rows = vec![CsvRow::new("rsi_db", -100.0, "proposed", "se_per_user", 3.25, 0.1)];
        let text = to_csv(&rows);
        assert_eq!(text, format!("{CSV_HEADER}\nrsi_db,-100,proposed,se_per_user,3.25,0.1\n"));
    }

    #[test]
    fn hash_tracks_the_scenario() {
        let a = Scenario::reference_baseline();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = 2;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
