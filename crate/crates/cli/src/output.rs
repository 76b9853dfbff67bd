//! Result files. Column order and JSON field names are stable.

use std::path::{Path, PathBuf};

use catsim::sim::{BankReport, SchemeReport};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::{sha256_hex, CliError, Result};

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const MANIFEST: &str = "manifest.json";

/// One metrics CSV row. `bank` is `all` for the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub config_hash: String,
    pub scheme: String,
    pub kind: String,
    pub counters: u32,
    pub bank: String,
    pub accesses: u64,
    pub refresh_events: u64,
    pub rows_refreshed: u64,
    pub epochs: u64,
    pub sim_time_ns: u64,
    pub delayed_accesses: u64,
    pub total_delay_ns: u64,
    pub violations: u64,
    pub cmrpo_dynamic: f64,
    pub cmrpo_static: f64,
    pub cmrpo_refresh: f64,
    pub cmrpo: f64,
    pub eto: f64,
    pub threshold_provenance: String,
}

impl MetricsRow {
    fn new(seed: u64, hash: &str, r: &SchemeReport, b: &BankReport) -> Self {
        let m = &b.metrics;
        MetricsRow {
            seed,
            config_hash: hash.to_string(),
            scheme: r.scheme.clone(),
            kind: r.kind.to_string(),
            counters: r.counters,
            bank: b.bank.map_or_else(|| "all".to_string(), |x| x.to_string()),
            accesses: m.accesses,
            refresh_events: m.refresh_events,
            rows_refreshed: m.rows_refreshed,
            epochs: m.epochs,
            sim_time_ns: m.sim_time_ns,
            delayed_accesses: m.delayed_accesses,
            total_delay_ns: m.total_delay_ns,
            violations: m.violations,
            cmrpo_dynamic: b.cmrpo.dynamic,
            cmrpo_static: b.cmrpo.static_,
            cmrpo_refresh: b.cmrpo.refresh,
            cmrpo: b.cmrpo.total,
            eto: b.eto,
            threshold_provenance: r.threshold_provenance.map_or_else(String::new, |p| p.to_string()),
        }
    }
}

/// Per-bank rows only when there is more than one bank, then the aggregate.
pub fn metrics_rows(seed: u64, hash: &str, reports: &[SchemeReport]) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for r in reports {
        if r.banks.len() > 1 {
            rows.extend(r.banks.iter().map(|b| MetricsRow::new(seed, hash, r, b)));
        }
        rows.push(MetricsRow::new(seed, hash, r, &r.aggregate));
    }
    rows
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serialisable");
    v.push(b'\n');
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub seed: u64,
    pub config_hash: String,
    pub reports: Vec<SchemeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub workload: u64,
    pub policy: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub scheme: String,
    pub provenance: String,
    pub values: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub generator: String,
    pub events: usize,
    pub banks: u32,
    /// Hash of the trace in text form.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub file: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run: `catsim run manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub thresholds: Vec<ThresholdRecord>,
    pub trace: TraceRecord,
    pub outputs: Vec<FileRecord>,
    pub config: ExperimentConfig,
}

/// Writes `files` into `dir`, creating it if needed.
pub fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    files
        .iter()
        .map(|(name, bytes)| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
            Ok(p)
        })
        .collect()
}

pub fn file_record(name: &str, bytes: &[u8]) -> FileRecord {
    FileRecord {
        file: name.to_string(),
        sha256: sha256_hex(bytes),
    }
}
