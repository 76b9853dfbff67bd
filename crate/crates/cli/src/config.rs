//! Experiment configuration.
//!
//! ```toml
//! seed = 7
//!
//! [bank]
//! n_rows = 65536
//! refresh_threshold = 32768
//!
//! [[schemes]]
//! scheme = "sca"
//! counters = 64
//!
//! [[schemes]]
//! scheme = "drcat"
//! counters = 64
//! levels = 11
//!
//! [workload]
//! kind = "gaussian-attack"
//! references = 1000000
//! mode = "heavy"
//! ```
//!
//! Optional sections: `[sim]`, `[sweep]`, `[energy]`, `[[thresholds]]`,
//! `[trace]` (replaces `[workload]`) and `[output]`.

use std::path::{Path, PathBuf};

use catsim::model::{load_trace, BankConfig, Trace, TraceFormat, DEFAULT_REFRESH_INTERVAL_NS};
use catsim::prng::derive_seed;
use catsim::schemes::SchemeSpec;
use catsim::sim::{EnergyModel, EnergyRow, SimOptions};
use catsim::thresholds::{ThresholdTable, ThresholdTableEntry};
use catsim::workloads::WorkloadSpec;
use serde::{Deserialize, Serialize};

use crate::{sha256_hex, CliError, Result};

/// Seed sub-streams derived from the master seed.
pub const WORKLOAD_STREAM: u64 = 0;
pub const POLICY_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub bank: BankSection,
    pub schemes: Vec<SchemeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSource>,
    #[serde(default)]
    pub sim: SimOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub energy: EnergySection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<ThresholdTableEntry>,
    /// Where results go; not part of the experiment identity.
    #[serde(default, skip_serializing)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSection {
    pub n_rows: u32,
    pub refresh_threshold: u32,
    #[serde(default = "default_interval")]
    pub refresh_interval_ns: u64,
}

fn default_interval() -> u64 {
    DEFAULT_REFRESH_INTERVAL_NS
}

impl BankSection {
    /// Scheme-independent part of the bank; schemes fill in counters and levels.
    pub fn base(&self) -> BankConfig {
        BankConfig {
            n_rows: self.n_rows,
            m_counters: 1,
            max_levels: 1,
            refresh_threshold: self.refresh_threshold,
            presplit_levels: 1,
            refresh_interval_ns: self.refresh_interval_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    pub path: PathBuf,
    #[serde(default)]
    pub format: TraceFileFormat,
    /// Spacing for untimed traces.
    #[serde(default = "default_gap")]
    pub gap_ns: u64,
}

fn default_gap() -> u64 {
    catsim::model::DEFAULT_ACCESS_GAP_NS
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFileFormat {
    #[default]
    Text,
    Untimed,
    Binary,
}

/// Re-runs every counter-based scheme at each listed counter budget.
/// CAT schemes keep their depth headroom `levels - log2(counters)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub counters: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_refresh_nj: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prng_nj_per_access: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_refresh_mw: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entries: Vec<EnergyRow>,
}

impl EnergySection {
    pub fn model(&self) -> EnergyModel {
        let mut m = EnergyModel::default();
        if let Some(v) = self.row_refresh_nj {
            m.row_refresh_nj = v;
        }
        if let Some(v) = self.prng_nj_per_access {
            m.prng_nj_per_access = v;
        }
        if let Some(v) = self.baseline_refresh_mw {
            m.baseline_refresh_mw = v;
        }
        for r in &self.entries {
            m.set_entry(r.scheme, r.counters, r.entry);
        }
        m
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// A validated config ready to run.
#[derive(Debug, Clone)]
pub struct Plan {
    pub base: BankConfig,
    pub specs: Vec<SchemeSpec>,
    pub table: Option<ThresholdTable>,
    pub energy: EnergyModel,
    pub config_hash: String,
    pub workload_seed: u64,
    pub policy_seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a TOML config, or the config echoed inside a run manifest (`.json`).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            #[derive(Deserialize)]
            struct Echo {
                config: ExperimentConfig,
            }
            let m: Echo = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Ok(m.config)
        } else {
            Self::from_toml(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
                other => other,
            })
        }
    }

    /// Hash of the canonical JSON form; independent of formatting and output paths.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serialises"))
    }

    /// The scheme list with any sweep applied.
    pub fn expanded_schemes(&self) -> Result<Vec<SchemeSpec>> {
        let Some(sweep) = &self.sweep else {
            return Ok(self.schemes.clone());
        };
        if sweep.counters.is_empty() {
            return Err(CliError::Config("sweep.counters: empty list".into()));
        }
        let mut out = Vec::new();
        for spec in &self.schemes {
            match spec {
                SchemeSpec::Pra { .. } => out.push(spec.clone()),
                SchemeSpec::Sca { .. } => {
                    out.extend(sweep.counters.iter().map(|&m| SchemeSpec::Sca { counters: m }))
                }
                SchemeSpec::Prcat(c) | SchemeSpec::Drcat(c) => {
                    if !c.counters.is_power_of_two() {
                        return Err(CliError::Config(format!(
                            "schemes.counters: {} is not a power of two",
                            c.counters
                        )));
                    }
                    let headroom = c.levels as i64 - c.counters.trailing_zeros() as i64;
                    for &m in &sweep.counters {
                        if !m.is_power_of_two() {
                            return Err(CliError::Config(format!(
                                "sweep.counters: {m} is not a power of two"
                            )));
                        }
                        let mut c = c.clone();
                        c.levels = (m.trailing_zeros() as i64 + headroom).max(1) as u32;
                        c.counters = m;
                        out.push(match spec {
                            SchemeSpec::Prcat(_) => SchemeSpec::Prcat(c),
                            _ => SchemeSpec::Drcat(c),
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<Plan> {
        let base = self
            .bank
            .base()
            .validate()
            .map_err(|e| CliError::Config(format!("bank: {e}")))?;
        if self.schemes.is_empty() {
            return Err(CliError::Config(
                "schemes: at least one scheme is required".into(),
            ));
        }
        match (&self.workload, &self.trace) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "workload and trace are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "workload: one of workload or trace is required".into(),
                ))
            }
            _ => {}
        }
        if self.sim.access_gap_ns == 0 {
            return Err(CliError::Config("sim.access_gap_ns: must be positive".into()));
        }
        let table = if self.thresholds.is_empty() {
            None
        } else {
            Some(
                ThresholdTable::from_entries(&self.thresholds)
                    .map_err(|e| CliError::Config(format!("thresholds: {e}")))?,
            )
        };
        let energy = self.energy.model();
        let specs = self.expanded_schemes()?;
        for (i, spec) in specs.iter().enumerate() {
            spec.build(&base, table.as_ref(), 0)
                .map_err(|e| CliError::Config(format!("schemes[{i}] ({}): {e}", spec.label())))?;
            energy
                .entry(spec)
                .map_err(|e| CliError::Config(format!("energy: {e}")))?;
        }
        Ok(Plan {
            base,
            specs,
            table,
            energy,
            config_hash: self.hash(),
            workload_seed: derive_seed(self.seed, WORKLOAD_STREAM),
            policy_seed: derive_seed(self.seed, POLICY_STREAM),
        })
    }

    /// Generates the workload or reads the trace file. File paths resolve
    /// relative to `root`.
    pub fn trace(&self, plan: &Plan, root: &Path) -> Result<Trace> {
        if let Some(w) = &self.workload {
            return w
                .generate(plan.base.n_rows, plan.workload_seed)
                .map_err(|e| CliError::Config(format!("workload: {e}")));
        }
        let src = self.trace.as_ref().expect("validated");
        let path = root.join(&src.path);
        let file =
            std::fs::File::open(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let format = match src.format {
            TraceFileFormat::Text => TraceFormat::Text,
            TraceFileFormat::Untimed => TraceFormat::Untimed { gap_ns: src.gap_ns },
            TraceFileFormat::Binary => TraceFormat::Binary,
        };
        load_trace(std::io::BufReader::new(file), format)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
