use std::io::Write;
use std::path::{Path, PathBuf};

use catsim::model::Trace;
use catsim::prng::{derive_seed, PrngKind};
use catsim::reliability::{
    monte_carlo_unsurvivability, q1_for_years, unsurvivability, MonteCarloConfig, ReliabilityQuery,
};
use catsim::sim::{compare, SchemeReport};
use catsim::thresholds::{heuristic_thresholds, resolve_thresholds, ThresholdTable, ThresholdTableEntry};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, OutputFormat};
use crate::output::{
    file_record, metrics_rows, to_csv, to_json, write_all, Manifest, MetricsDocument, Seeds, ThresholdRecord,
    TraceRecord, MANIFEST, METRICS_CSV, METRICS_JSON,
};
use crate::{sha256_hex, CliError, Result};

pub const DEFAULT_OUT_DIR: &str = "catsim-out";

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub reports: Vec<SchemeReport>,
    pub manifest: Manifest,
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn trace_digest(trace: &Trace) -> String {
    let mut h = HashWriter(Sha256::new());
    trace
        .write_text(std::io::BufWriter::new(&mut h))
        .expect("hashing cannot fail");
    h.0.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs every configured scheme on one trace and writes metrics plus a manifest.
pub fn cmd_run(args: &RunArgs) -> Result<RunOutcome> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    // Trace paths are pinned to absolute form so a manifest re-run finds them.
    if let Some(src) = config.trace.as_mut() {
        if src.path.is_relative() {
            let root = args.config.parent().unwrap_or(Path::new("."));
            let joined = root.join(&src.path);
            src.path = joined
                .canonicalize()
                .map_err(|e| CliError::Config(format!("trace.path {}: {e}", joined.display())))?;
        }
    }
    let plan = config.validate()?;
    let trace = config.trace(&plan, Path::new("."))?;
    let reports = compare(
        &trace,
        &plan.specs,
        &plan.base,
        plan.table.as_ref(),
        &plan.energy,
        plan.policy_seed,
        &config.sim,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;

    let format = args.format.unwrap_or(config.output.format);
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));

    let mut files = Vec::new();
    match format {
        OutputFormat::Csv => {
            let rows = metrics_rows(config.seed, &plan.config_hash, &reports);
            files.push((METRICS_CSV.to_string(), to_csv(&rows)?));
        }
        OutputFormat::Json => {
            let doc = MetricsDocument {
                seed: config.seed,
                config_hash: plan.config_hash.clone(),
                reports: reports.clone(),
            };
            files.push((METRICS_JSON.to_string(), to_json(&doc)));
        }
    }
    let manifest = Manifest {
        tool: "catsim".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: plan.config_hash.clone(),
        seeds: Seeds {
            master: config.seed,
            workload: plan.workload_seed,
            policy: plan.policy_seed,
        },
        thresholds: reports
            .iter()
            .filter_map(|r| {
                Some(ThresholdRecord {
                    scheme: r.scheme.clone(),
                    provenance: r.threshold_provenance?.to_string(),
                    values: r.thresholds.clone()?,
                })
            })
            .collect(),
        trace: TraceRecord {
            generator: trace.meta.generator.clone(),
            events: trace.len(),
            banks: trace.bank_count(),
            sha256: trace_digest(&trace),
        },
        outputs: files.iter().map(|(n, b)| file_record(n, b)).collect(),
        config,
    };
    files.push((MANIFEST.to_string(), to_json(&manifest)));
    let paths = write_all(&out_dir, &files)?;
    Ok(RunOutcome {
        out_dir,
        files: paths,
        reports,
        manifest,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReliabilityArgs {
    pub p: Vec<f64>,
    pub t: Vec<u32>,
    pub q0: Vec<f64>,
    pub years: f64,
    pub prng: PrngKind,
    /// Monte Carlo trials per grid point; 0 gives analytic values only.
    pub trials: u64,
    /// Refresh intervals simulated per trial.
    pub intervals: u32,
    pub seed: u64,
}

impl Default for ReliabilityArgs {
    fn default() -> Self {
        ReliabilityArgs {
            p: vec![0.002],
            t: vec![32768],
            q0: vec![40.0],
            years: 5.0,
            prng: PrngKind::Quality,
            trials: 0,
            intervals: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub seed: u64,
    pub config_hash: String,
    pub p: f64,
    pub t: u32,
    pub q0: f64,
    pub q1: f64,
    pub prng: String,
    pub analytic: f64,
    pub trials: u64,
    pub intervals: u32,
    /// Fraction of trials with a failed window within `intervals` intervals.
    pub empirical: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Closed-form counterpart of `empirical`.
    pub analytic_at_intervals: Option<f64>,
    pub windows: Option<u64>,
    pub failed_windows: Option<u64>,
    pub window_rate: Option<f64>,
    pub window_ci_low: Option<f64>,
    pub window_ci_high: Option<f64>,
    pub analytic_window_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub seed: u64,
    pub config_hash: String,
    pub p: f64,
    pub t: u32,
    pub q0: f64,
    pub prng: String,
    pub intervals: u32,
    pub failed_trials: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub analytic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityOutput {
    pub rows: Vec<ReliabilityRow>,
    pub curve: Vec<CurveRow>,
}

/// Analytic unsurvivability over a `(p, T, Q0)` grid, optionally with Monte Carlo.
pub fn cmd_reliability(args: &ReliabilityArgs) -> Result<ReliabilityOutput> {
    let hash = sha256_hex(&serde_json::to_vec(args).expect("serialisable"));
    let q1 = q1_for_years(args.years);
    let prng = match args.prng {
        PrngKind::Quality => "quality",
        PrngKind::Lfsr => "lfsr",
    }
    .to_string();
    let mut rows = Vec::new();
    let mut curve = Vec::new();
    let mut point = 0u64;
    for &p in &args.p {
        for &t in &args.t {
            for &q0 in &args.q0 {
                let q = ReliabilityQuery::new(p, t, q0, q1).map_err(|e| CliError::Config(e.to_string()))?;
                let analytic = unsurvivability(&q);
                let mut row = ReliabilityRow {
                    seed: args.seed,
                    config_hash: hash.clone(),
                    p,
                    t,
                    q0,
                    q1,
                    prng: prng.clone(),
                    analytic,
                    trials: args.trials,
                    intervals: args.intervals,
                    empirical: None,
                    ci_low: None,
                    ci_high: None,
                    analytic_at_intervals: None,
                    windows: None,
                    failed_windows: None,
                    window_rate: None,
                    window_ci_low: None,
                    window_ci_high: None,
                    analytic_window_rate: catsim::reliability::ln_window_failure(p, t).exp(),
                };
                if args.trials > 0 {
                    if q0.fract() != 0.0 || q0 < 1.0 {
                        return Err(CliError::Config(format!(
                            "q0: Monte Carlo needs a whole number, got {q0}"
                        )));
                    }
                    let mc = monte_carlo_unsurvivability(&MonteCarloConfig {
                        p,
                        t,
                        prng: args.prng,
                        trials: args.trials,
                        intervals: args.intervals,
                        q0: q0 as u32,
                        seed: derive_seed(args.seed, point),
                    })
                    .map_err(|e| CliError::Config(e.to_string()))?;
                    let last = mc.curve.last().expect("intervals > 0");
                    row.empirical = Some(last.estimate);
                    row.ci_low = Some(last.ci_low);
                    row.ci_high = Some(last.ci_high);
                    row.analytic_at_intervals = Some(last.analytic);
                    row.windows = Some(mc.windows);
                    row.failed_windows = Some(mc.failed_windows);
                    row.window_rate = Some(mc.window_rate);
                    row.window_ci_low = Some(mc.window_ci.0);
                    row.window_ci_high = Some(mc.window_ci.1);
                    curve.extend(mc.curve.iter().map(|c| CurveRow {
                        seed: args.seed,
                        config_hash: hash.clone(),
                        p,
                        t,
                        q0,
                        prng: prng.clone(),
                        intervals: c.intervals,
                        failed_trials: c.failed_trials,
                        estimate: c.estimate,
                        ci_low: c.ci_low,
                        ci_high: c.ci_high,
                        analytic: c.analytic,
                    }));
                }
                rows.push(row);
                point += 1;
            }
        }
    }
    Ok(ReliabilityOutput { rows, curve })
}

/// Renders reliability results as `(file name, bytes)` pairs.
pub fn reliability_files(out: &ReliabilityOutput, format: OutputFormat) -> Result<Vec<(String, Vec<u8>)>> {
    Ok(match format {
        OutputFormat::Csv => {
            let mut files = vec![("reliability.csv".to_string(), to_csv(&out.rows)?)];
            if !out.curve.is_empty() {
                files.push(("reliability_curve.csv".to_string(), to_csv(&out.curve)?));
            }
            files
        }
        OutputFormat::Json => vec![("reliability.json".to_string(), to_json(out))],
    })
}

#[derive(Debug, Clone, Default)]
pub struct ThresholdArgs {
    pub m: u32,
    pub l: u32,
    pub t: u32,
    /// TOML file with `[[thresholds]]` entries.
    pub table: Option<PathBuf>,
    pub compare: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub m: u32,
    pub l: u32,
    pub t: u32,
    pub first_level: u32,
    pub values: Vec<u32>,
    pub provenance: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heuristic: Option<Vec<u32>>,
}

impl std::fmt::Display for ThresholdReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "M={} L={} T={}", self.m, self.l, self.t)?;
        writeln!(f, "first_level: {}", self.first_level)?;
        writeln!(f, "thresholds: {:?}", self.values)?;
        writeln!(f, "provenance: {}", self.provenance)?;
        if let Some(h) = &self.heuristic {
            writeln!(f, "heuristic: {h:?}")?;
        }
        Ok(())
    }
}

pub fn cmd_thresholds(args: &ThresholdArgs) -> Result<ThresholdReport> {
    let (m, l, t) = (args.m, args.l, args.t);
    if m == 0 || !m.is_power_of_two() {
        return Err(CliError::Config(format!("m: {m} is not a power of two")));
    }
    if l < m.trailing_zeros() + 1 || l > 31 {
        return Err(CliError::Config(format!("l: {l} cannot hold {m} leaves")));
    }
    if t == 0 {
        return Err(CliError::Config("t: must be positive".into()));
    }
    let table = match &args.table {
        None => None,
        Some(path) => {
            #[derive(Deserialize)]
            struct TableFile {
                thresholds: Vec<ThresholdTableEntry>,
            }
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let f: TableFile =
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Some(ThresholdTable::from_entries(&f.thresholds).map_err(|e| CliError::Config(e.to_string()))?)
        }
    };
    let th = resolve_thresholds(m, l, t, table.as_ref());
    Ok(ThresholdReport {
        m,
        l,
        t,
        first_level: th.first_level(),
        values: th.values().to_vec(),
        provenance: th.provenance().to_string(),
        heuristic: args
            .compare
            .then(|| heuristic_thresholds(m, l, t).values().to_vec()),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum TraceOutFormat {
    #[default]
    Text,
    Binary,
}

#[derive(Debug, Clone, Default)]
pub struct GenTraceArgs {
    /// Experiment config; its `[workload]`, `[bank]` and seed are used.
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub format: TraceOutFormat,
}

/// Generates the configured workload and writes it as a trace file.
pub fn cmd_gen_trace(args: &GenTraceArgs) -> Result<usize> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let w = config
        .workload
        .as_ref()
        .ok_or_else(|| CliError::Config("workload: section required".into()))?;
    let base = config
        .bank
        .base()
        .validate()
        .map_err(|e| CliError::Config(format!("bank: {e}")))?;
    let trace = w
        .generate(
            base.n_rows,
            derive_seed(config.seed, crate::config::WORKLOAD_STREAM),
        )
        .map_err(|e| CliError::Config(format!("workload: {e}")))?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = std::fs::File::create(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let mut out = std::io::BufWriter::new(file);
    match args.format {
        TraceOutFormat::Text => trace.write_text(&mut out),
        TraceOutFormat::Binary => trace.write_binary(&mut out),
    }
    .and_then(|_| out.flush())
    .map_err(|e| CliError::io(&args.out, e))?;
    Ok(trace.len())
}
