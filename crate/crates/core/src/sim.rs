//! Trace replay: one policy per bank, refresh accounting, mitigation power
//! (CMRPO) and a bank-busy execution-time overhead proxy (ETO).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AccessEvent, BankConfig, RefreshEvent, Trace, TraceError, DEFAULT_ACCESS_GAP_NS};
use crate::oracle::SafetyOracle;
use crate::prng::derive_seed;
use crate::schemes::{SchemeError, SchemeKind, SchemeSpec};
use crate::thresholds::{Provenance, ThresholdTable};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error("trace does not fit the bank configuration: {0}")]
    Trace(#[from] TraceError),
    #[error("no energy entry for {kind} with {counters} counters")]
    NoEnergyEntry { kind: SchemeKind, counters: u32 },
    #[error("simulated time is zero; rates are undefined")]
    ZeroTime,
}

/// Per-bank hardware energy of one scheme configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyEntry {
    pub dynamic_nj_per_access: f64,
    pub static_nj_per_interval: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub scheme: SchemeKind,
    /// Counter count; 0 for PRA.
    pub counters: u32,
    #[serde(flatten)]
    pub entry: EnergyEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub row_refresh_nj: f64,
    pub prng_nj_per_access: f64,
    pub baseline_refresh_mw: f64,
    pub table: Vec<EnergyRow>,
}

/// `(counters, dynamic nJ per access, static nJ per interval)`.
type EnergyPoints = [(u32, f64, f64); 5];

const TABLE: [(SchemeKind, EnergyPoints); 3] = [
    (
        SchemeKind::Drcat,
        [
            (32, 3.05e-4, 5.77e3),
            (64, 4.30e-4, 1.39e4),
            (128, 5.83e-4, 2.77e4),
            (256, 8.72e-4, 5.44e4),
            (512, 1.17e-3, 1.06e5),
        ],
    ),
    (
        SchemeKind::Prcat,
        [
            (32, 2.91e-4, 5.55e3),
            (64, 4.09e-4, 1.32e4),
            (128, 5.50e-4, 2.63e4),
            (256, 8.25e-4, 5.13e4),
            (512, 1.10e-3, 1.02e5),
        ],
    ),
    (
        SchemeKind::Sca,
        [
            (32, 1.41e-4, 3.16e3),
            (64, 1.92e-4, 8.81e3),
            (128, 2.22e-4, 1.44e4),
            (256, 3.12e-4, 2.39e4),
            (512, 4.25e-4, 4.52e4),
        ],
    ),
];

impl Default for EnergyModel {
    fn default() -> Self {
        let mut m = EnergyModel {
            row_refresh_nj: 1.0,
            prng_nj_per_access: 2.625e-2,
            baseline_refresh_mw: 2.5,
            table: Vec::new(),
        };
        for (kind, rows) in TABLE {
            for (counters, d, s) in rows {
                m.set_entry(
                    kind,
                    counters,
                    EnergyEntry {
                        dynamic_nj_per_access: d,
                        static_nj_per_interval: s,
                    },
                );
            }
        }
        m.set_entry(
            SchemeKind::Pra,
            0,
            EnergyEntry {
                dynamic_nj_per_access: 0.0,
                static_nj_per_interval: 0.0,
            },
        );
        m
    }
}

impl EnergyModel {
    pub fn get(&self, scheme: SchemeKind, counters: u32) -> Option<EnergyEntry> {
        self.table
            .iter()
            .find(|r| r.scheme == scheme && r.counters == counters)
            .map(|r| r.entry)
    }

    /// Inserts or replaces the entry for `(scheme, counters)`.
    pub fn set_entry(&mut self, scheme: SchemeKind, counters: u32, entry: EnergyEntry) {
        match self
            .table
            .iter_mut()
            .find(|r| r.scheme == scheme && r.counters == counters)
        {
            Some(r) => r.entry = entry,
            None => self.table.push(EnergyRow {
                scheme,
                counters,
                entry,
            }),
        }
    }

    pub fn entry(&self, spec: &SchemeSpec) -> Result<EnergyEntry, SimError> {
        self.get(spec.kind(), spec.counters())
            .ok_or(SimError::NoEnergyEntry {
                kind: spec.kind(),
                counters: spec.counters(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Time a bank is busy per refreshed row.
    pub row_refresh_time_ns: u64,
    /// Spacing added after the last access when measuring trace duration.
    pub access_gap_ns: u64,
    /// Track exact per-row counts and report safety violations.
    pub oracle: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            row_refresh_time_ns: 50,
            access_gap_ns: DEFAULT_ACCESS_GAP_NS,
            oracle: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub accesses: u64,
    pub refresh_events: u64,
    pub rows_refreshed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub accesses: u64,
    pub refresh_events: u64,
    pub rows_refreshed: u64,
    pub epochs: u64,
    pub sim_time_ns: u64,
    pub delayed_accesses: u64,
    pub total_delay_ns: u64,
    /// Banks whose activity is summed here.
    pub banks: u32,
    /// Oracle violations; zero when the oracle is off.
    pub violations: u64,
    pub per_epoch: Vec<EpochMetrics>,
}

impl Metrics {
    /// Component-wise sum; time and epochs are shared, not added.
    pub fn merge(&mut self, other: &Metrics) {
        self.accesses += other.accesses;
        self.refresh_events += other.refresh_events;
        self.rows_refreshed += other.rows_refreshed;
        self.delayed_accesses += other.delayed_accesses;
        self.total_delay_ns += other.total_delay_ns;
        self.banks += other.banks;
        self.violations += other.violations;
        self.epochs = self.epochs.max(other.epochs);
        self.sim_time_ns = self.sim_time_ns.max(other.sim_time_ns);
        for (i, e) in other.per_epoch.iter().enumerate() {
            if i >= self.per_epoch.len() {
                self.per_epoch.push(EpochMetrics {
                    epoch: e.epoch,
                    ..Default::default()
                });
            }
            let m = &mut self.per_epoch[i];
            m.accesses += e.accesses;
            m.refresh_events += e.refresh_events;
            m.rows_refreshed += e.rows_refreshed;
        }
    }
}

/// Mitigation power relative to the regular auto-refresh power, by component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cmrpo {
    pub dynamic: f64,
    pub static_: f64,
    pub refresh: f64,
    pub total: f64,
}

/// CMRPO for `m`, which covers `m.banks` banks over `m.sim_time_ns`.
pub fn cmrpo(
    m: &Metrics,
    entry: &EnergyEntry,
    energy: &EnergyModel,
    kind: SchemeKind,
    refresh_interval_ns: u64,
) -> Result<Cmrpo, SimError> {
    if m.sim_time_ns == 0 || refresh_interval_ns == 0 {
        return Err(SimError::ZeroTime);
    }
    let banks = f64::from(m.banks.max(1));
    let time = m.sim_time_ns as f64;
    let per_access = entry.dynamic_nj_per_access
        + if kind == SchemeKind::Pra {
            energy.prng_nj_per_access
        } else {
            0.0
        };
    // nJ per ns is W; scale to mW.
    let dynamic = per_access * m.accesses as f64 / time * 1e3;
    let static_ = entry.static_nj_per_interval / refresh_interval_ns as f64 * 1e3 * banks;
    let refresh = m.rows_refreshed as f64 * energy.row_refresh_nj / time * 1e3;
    let baseline = energy.baseline_refresh_mw * banks;
    let (dynamic, static_, refresh) = (dynamic / baseline, static_ / baseline, refresh / baseline);
    Ok(Cmrpo {
        dynamic,
        static_,
        refresh,
        total: dynamic + static_ + refresh,
    })
}

/// Stall time per unit of bank time.
pub fn eto(m: &Metrics) -> f64 {
    if m.sim_time_ns == 0 {
        return 0.0;
    }
    m.total_delay_ns as f64 / (m.sim_time_ns as f64 * f64::from(m.banks.max(1)))
}

/// Metrics with derived rates for one bank (`bank = None` for the aggregate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankReport {
    pub bank: Option<u32>,
    pub metrics: Metrics,
    pub cmrpo: Cmrpo,
    pub eto: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub scheme: String,
    pub kind: SchemeKind,
    pub counters: u32,
    pub threshold_provenance: Option<Provenance>,
    pub thresholds: Option<Vec<u32>>,
    pub banks: Vec<BankReport>,
    pub aggregate: BankReport,
}

struct BankState {
    policy: crate::schemes::MitigationPolicy,
    oracle: Option<SafetyOracle>,
    busy_until: u64,
    metrics: Metrics,
}

/// Replays `trace`, calling `observe` for every access with the refresh it caused.
pub fn run_observed(
    trace: &Trace,
    spec: &SchemeSpec,
    base: &BankConfig,
    table: Option<&ThresholdTable>,
    seed: u64,
    opts: &SimOptions,
    mut observe: impl FnMut(&AccessEvent, Option<&RefreshEvent>),
) -> Result<Vec<Metrics>, SimError> {
    let base = base.validate().map_err(SchemeError::from)?;
    let banks = trace.bank_count();
    trace.check_bounds(base.n_rows, banks)?;
    let interval = base.refresh_interval_ns;
    let (first, last) = match (trace.events.first(), trace.events.last()) {
        (Some(f), Some(l)) => (f.timestamp_ns, l.timestamp_ns),
        _ => (0, 0),
    };
    let sim_time = if trace.is_empty() {
        interval
    } else {
        (last - first + opts.access_gap_ns).max(interval)
    };
    let first_epoch = first / interval;
    let epochs = if trace.is_empty() {
        1
    } else {
        last / interval - first_epoch + 1
    };
    let mut states = Vec::with_capacity(banks as usize);
    for b in 0..banks {
        states.push(BankState {
            policy: spec.build(&base, table, derive_seed(seed, u64::from(b)))?,
            oracle: opts.oracle.then(|| SafetyOracle::new(b, &base)),
            busy_until: 0,
            metrics: Metrics {
                epochs,
                sim_time_ns: sim_time,
                banks: 1,
                per_epoch: (0..epochs)
                    .map(|i| EpochMetrics {
                        epoch: first_epoch + i,
                        ..Default::default()
                    })
                    .collect(),
                ..Default::default()
            },
        });
    }
    for a in &trace.events {
        let st = &mut states[a.bank as usize];
        let t = a.timestamp_ns;
        let ep = &mut st.metrics.per_epoch[(t / interval - first_epoch) as usize];
        ep.accesses += 1;
        st.metrics.accesses += 1;
        if t < st.busy_until {
            st.metrics.delayed_accesses += 1;
            st.metrics.total_delay_ns += st.busy_until - t;
        }
        let ev = st.policy.access(a.bank, a.row, t);
        if let Some(e) = &ev {
            let rows = e.rows();
            ep.refresh_events += 1;
            ep.rows_refreshed += rows;
            st.metrics.refresh_events += 1;
            st.metrics.rows_refreshed += rows;
            st.busy_until = st.busy_until.max(t) + rows * opts.row_refresh_time_ns;
        }
        if let Some(o) = &mut st.oracle {
            if o.observe(a.row, t, ev.as_ref()).is_some() {
                st.metrics.violations += 1;
            }
        }
        observe(a, ev.as_ref());
    }
    Ok(states.into_iter().map(|s| s.metrics).collect())
}

/// Replays `trace` through `spec` and derives CMRPO and ETO per bank and in aggregate.
pub fn run(
    trace: &Trace,
    spec: &SchemeSpec,
    base: &BankConfig,
    table: Option<&ThresholdTable>,
    energy: &EnergyModel,
    seed: u64,
    opts: &SimOptions,
) -> Result<SchemeReport, SimError> {
    let entry = energy.entry(spec)?;
    let per_bank = run_observed(trace, spec, base, table, seed, opts, |_, _| {})?;
    let interval = base.refresh_interval_ns;
    let report = |bank: Option<u32>, m: Metrics| -> Result<BankReport, SimError> {
        Ok(BankReport {
            bank,
            cmrpo: cmrpo(&m, &entry, energy, spec.kind(), interval)?,
            eto: eto(&m),
            metrics: m,
        })
    };
    let mut agg = Metrics::default();
    for m in &per_bank {
        agg.merge(m);
    }
    let th = spec.thresholds(base, table)?;
    Ok(SchemeReport {
        scheme: spec.label(),
        kind: spec.kind(),
        counters: spec.counters(),
        threshold_provenance: th.as_ref().map(|t| t.provenance()),
        thresholds: th.map(|t| t.values().to_vec()),
        aggregate: report(None, agg)?,
        banks: per_bank
            .into_iter()
            .enumerate()
            .map(|(i, m)| report(Some(i as u32), m))
            .collect::<Result<_, _>>()?,
    })
}

/// Runs every scheme on the same trace.
pub fn compare(
    trace: &Trace,
    specs: &[SchemeSpec],
    base: &BankConfig,
    table: Option<&ThresholdTable>,
    energy: &EnergyModel,
    seed: u64,
    opts: &SimOptions,
) -> Result<Vec<SchemeReport>, SimError> {
    specs
        .iter()
        .map(|s| run(trace, s, base, table, energy, seed, opts))
        .collect()
}
