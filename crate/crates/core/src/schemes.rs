//! Mitigation policies: static counter array (SCA), probabilistic adjacent-row
//! refresh (PRA), periodically reset CAT (PRCAT) and dynamically reconfigured
//! CAT (DRCAT).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BankConfig, BankId, ConfigError, RefreshCause, RefreshEvent, Row};
use crate::prng::{PrngHandle, PrngKind};
use crate::thresholds::{resolve_thresholds, Provenance, SplitThresholds, ThresholdError, ThresholdTable};
use crate::tree::{CatState, Merge, TreeError, MAX_WEIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Sca,
    Pra,
    Prcat,
    Drcat,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Sca => "sca",
            SchemeKind::Pra => "pra",
            SchemeKind::Prcat => "prcat",
            SchemeKind::Drcat => "drcat",
        })
    }
}

/// Scheme selection and parameters, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase", deny_unknown_fields)]
pub enum SchemeSpec {
    Sca {
        counters: u32,
    },
    Pra {
        p: f64,
        #[serde(default)]
        prng: PrngKind,
    },
    Prcat(CatSpec),
    Drcat(CatSpec),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatSpec {
    pub counters: u32,
    pub levels: u32,
    /// Pre-split depth; defaults to log2(counters).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presplit: Option<u32>,
    /// Explicit split thresholds ending at level `levels - 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<u32>>,
}

impl CatSpec {
    pub fn new(counters: u32, levels: u32) -> Self {
        CatSpec {
            counters,
            levels,
            presplit: None,
            thresholds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Thresholds(#[from] ThresholdError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("refresh probability must lie in (0, 1], got {0}")]
    BadProbability(f64),
}

impl SchemeSpec {
    pub fn kind(&self) -> SchemeKind {
        match self {
            SchemeSpec::Sca { .. } => SchemeKind::Sca,
            SchemeSpec::Pra { .. } => SchemeKind::Pra,
            SchemeSpec::Prcat(_) => SchemeKind::Prcat,
            SchemeSpec::Drcat(_) => SchemeKind::Drcat,
        }
    }

    /// Short display name, e.g. `SCA_64`, `PRA_0.002`, `DRCAT_64_L11`.
    pub fn label(&self) -> String {
        match self {
            SchemeSpec::Sca { counters } => format!("SCA_{counters}"),
            SchemeSpec::Pra { p, prng } => match prng {
                PrngKind::Quality => format!("PRA_{p}"),
                PrngKind::Lfsr => format!("PRA_{p}_lfsr"),
            },
            SchemeSpec::Prcat(c) => format!("PRCAT_{}_L{}", c.counters, c.levels),
            SchemeSpec::Drcat(c) => format!("DRCAT_{}_L{}", c.counters, c.levels),
        }
    }

    /// Counter count used for hardware cost (0 for PRA).
    pub fn counters(&self) -> u32 {
        match self {
            SchemeSpec::Sca { counters } => *counters,
            SchemeSpec::Pra { .. } => 0,
            SchemeSpec::Prcat(c) | SchemeSpec::Drcat(c) => c.counters,
        }
    }

    /// Bank configuration seen by this scheme: rows, threshold and interval
    /// come from `base`, the counter geometry from the scheme.
    pub fn bank_config(&self, base: &BankConfig) -> Result<BankConfig, SchemeError> {
        let mut cfg = *base;
        match self {
            SchemeSpec::Sca { counters } => {
                cfg.m_counters = *counters;
                cfg.max_levels = counters.max(&1).trailing_zeros() + 1;
                cfg.presplit_levels = 1;
            }
            SchemeSpec::Pra { p, .. } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(SchemeError::BadProbability(*p));
                }
                cfg.m_counters = 1;
                cfg.max_levels = 1;
                cfg.presplit_levels = 1;
            }
            SchemeSpec::Prcat(c) | SchemeSpec::Drcat(c) => {
                cfg.m_counters = c.counters;
                cfg.max_levels = c.levels;
                cfg.presplit_levels = c
                    .presplit
                    .unwrap_or_else(|| c.counters.max(1).trailing_zeros().max(1));
            }
        }
        Ok(cfg.validate()?)
    }

    /// Split thresholds for tree schemes; `None` for SCA and PRA.
    pub fn thresholds(
        &self,
        base: &BankConfig,
        table: Option<&ThresholdTable>,
    ) -> Result<Option<SplitThresholds>, SchemeError> {
        match self {
            SchemeSpec::Prcat(c) | SchemeSpec::Drcat(c) => {
                let t = base.refresh_threshold;
                let th = match &c.thresholds {
                    Some(v) => SplitThresholds::ending_at(c.levels, v.clone(), Provenance::Custom)?,
                    None => resolve_thresholds(c.counters, c.levels, t, table),
                };
                th.check_against(c.levels, t)?;
                Ok(Some(th))
            }
            _ => Ok(None),
        }
    }

    /// Instantiates the policy for one bank. `seed` only matters for PRA.
    pub fn build(
        &self,
        base: &BankConfig,
        table: Option<&ThresholdTable>,
        seed: u64,
    ) -> Result<MitigationPolicy, SchemeError> {
        let cfg = self.bank_config(base)?;
        Ok(match self {
            SchemeSpec::Sca { .. } => MitigationPolicy::Sca(Sca::new(cfg)?),
            SchemeSpec::Pra { p, prng } => {
                MitigationPolicy::Pra(Pra::new(cfg, *p, PrngHandle::new(*prng, seed))?)
            }
            SchemeSpec::Prcat(_) => {
                let th = self.thresholds(base, table)?.expect("tree scheme");
                MitigationPolicy::Prcat(Prcat::new(cfg, th)?)
            }
            SchemeSpec::Drcat(_) => {
                let th = self.thresholds(base, table)?.expect("tree scheme");
                MitigationPolicy::Drcat(Drcat::new(cfg, th)?)
            }
        })
    }
}

fn epoch_of(cfg: &BankConfig, now_ns: u64) -> u64 {
    now_ns / cfg.refresh_interval_ns
}

/// Static counter array: one counter per fixed group of `N/M` rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sca {
    cfg: BankConfig,
    group_size: u32,
    counts: Vec<u32>,
    epoch: u64,
}

impl Sca {
    pub fn new(cfg: BankConfig) -> Result<Self, ConfigError> {
        let cfg = cfg.validate()?;
        if cfg.n_rows % cfg.m_counters != 0 {
            return Err(ConfigError::RowsNotDivisible {
                n: cfg.n_rows,
                leaves: u64::from(cfg.m_counters),
            });
        }
        Ok(Sca {
            cfg,
            group_size: cfg.n_rows / cfg.m_counters,
            counts: vec![0; cfg.m_counters as usize],
            epoch: 0,
        })
    }

    pub fn group_size(&self) -> u32 {
        self.group_size
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn access(&mut self, bank: BankId, row: Row, now_ns: u64) -> Option<RefreshEvent> {
        let e = epoch_of(&self.cfg, now_ns);
        if e != self.epoch {
            self.counts.iter_mut().for_each(|c| *c = 0);
            self.epoch = e;
        }
        let g = (row / self.group_size) as usize;
        self.counts[g] += 1;
        if self.counts[g] < self.cfg.refresh_threshold {
            return None;
        }
        self.counts[g] = 0;
        let low = g as u32 * self.group_size;
        Some(RefreshEvent::widened(
            bank,
            low,
            low + self.group_size - 1,
            self.cfg.n_rows,
            RefreshCause::ScaGroup,
            now_ns,
        ))
    }
}

/// Probabilistic adjacent-row refresh.
#[derive(Debug, Clone)]
pub struct Pra {
    cfg: BankConfig,
    p: f64,
    prng: PrngHandle,
}

impl Pra {
    pub fn new(cfg: BankConfig, p: f64, prng: PrngHandle) -> Result<Self, SchemeError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(SchemeError::BadProbability(p));
        }
        Ok(Pra { cfg, p, prng })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn prng(&self) -> &PrngHandle {
        &self.prng
    }

    /// Test hook: refresh on every access.
    pub fn force_refresh(&mut self) {
        self.p = 1.0;
    }

    pub fn access(&mut self, bank: BankId, row: Row, now_ns: u64) -> Option<RefreshEvent> {
        if self.prng.bernoulli(self.p) {
            RefreshEvent::neighbors(bank, row, self.cfg.n_rows, now_ns)
        } else {
            None
        }
    }
}

/// CAT rebuilt at every refresh-interval boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prcat {
    tree: CatState,
    epoch: u64,
}

impl Prcat {
    pub fn new(cfg: BankConfig, thresholds: SplitThresholds) -> Result<Self, TreeError> {
        Ok(Prcat {
            tree: CatState::new(cfg, thresholds)?,
            epoch: 0,
        })
    }

    pub fn tree(&self) -> &CatState {
        &self.tree
    }

    pub fn access(&mut self, bank: BankId, row: Row, now_ns: u64) -> Option<RefreshEvent> {
        let e = epoch_of(self.tree.config(), now_ns);
        if e != self.epoch {
            self.tree.reset();
            self.epoch = e;
        }
        let n = self.tree.config().n_rows;
        self.tree.record_access(row).map(|r| r.to_event(bank, n, now_ns))
    }
}

/// Effect of one threshold refresh on a DRCAT tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrcatReport {
    /// Weights right after the increment/decrement step.
    pub weights: Vec<u8>,
    pub merge: Option<Merge>,
    /// Counter created by splitting the hot leaf.
    pub split: Option<u32>,
}

/// CAT that keeps its shape across epochs and moves counters from cold to
/// hot regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Drcat {
    tree: CatState,
    epoch: u64,
    reconfigurations: u64,
}

impl Drcat {
    pub fn new(cfg: BankConfig, thresholds: SplitThresholds) -> Result<Self, TreeError> {
        Ok(Self::from_tree(CatState::new(cfg, thresholds)?))
    }

    pub fn from_tree(tree: CatState) -> Self {
        Drcat {
            tree,
            epoch: 0,
            reconfigurations: 0,
        }
    }

    pub fn tree(&self) -> &CatState {
        &self.tree
    }

    pub fn reconfigurations(&self) -> u64 {
        self.reconfigurations
    }

    pub fn access(&mut self, bank: BankId, row: Row, now_ns: u64) -> Option<RefreshEvent> {
        let e = epoch_of(self.tree.config(), now_ns);
        if e != self.epoch {
            // Every row was refreshed by the burst; the learnt shape stays.
            self.tree.clear_counts();
            self.epoch = e;
        }
        let n = self.tree.config().n_rows;
        let r = self.tree.record_access(row)?;
        self.on_refresh(r.counter);
        Some(r.to_event(bank, n, now_ns))
    }

    /// Weight update and optional merge/split after `leaf` was refreshed.
    pub fn on_refresh(&mut self, leaf: u32) -> Option<DrcatReport> {
        if !self.tree.is_full() {
            return None;
        }
        for i in 0..self.tree.config().m_counters {
            let c = *self.tree.counter(i);
            if !c.active {
                continue;
            }
            let w = if i == leaf {
                (c.weight + 1).min(MAX_WEIGHT)
            } else {
                c.weight.saturating_sub(1)
            };
            self.tree.set_weight(i, w);
        }
        let mut report = DrcatReport {
            weights: self.tree.weights(),
            merge: None,
            split: None,
        };
        let hot = *self.tree.counter(leaf);
        if hot.weight < MAX_WEIGHT || hot.depth() + 1 >= self.tree.config().max_levels {
            return Some(report);
        }
        let Some(node) = self.tree.find_mergeable(|a, b| a.weight == 0 && b.weight == 0) else {
            return Some(report);
        };
        let merge = self.tree.merge(node).expect("candidate has two leaf children");
        let new = self.tree.split(leaf).expect("merge freed a counter");
        self.tree.set_weight(leaf, 1);
        self.tree.set_weight(new, 1);
        self.reconfigurations += 1;
        report.merge = Some(merge);
        report.split = Some(new);
        Some(report)
    }
}

/// One policy instance per bank.
#[derive(Debug, Clone)]
pub enum MitigationPolicy {
    Sca(Sca),
    Pra(Pra),
    Prcat(Prcat),
    Drcat(Drcat),
}

impl MitigationPolicy {
    pub fn kind(&self) -> SchemeKind {
        match self {
            MitigationPolicy::Sca(_) => SchemeKind::Sca,
            MitigationPolicy::Pra(_) => SchemeKind::Pra,
            MitigationPolicy::Prcat(_) => SchemeKind::Prcat,
            MitigationPolicy::Drcat(_) => SchemeKind::Drcat,
        }
    }

    /// Processes one activation at `now_ns`; epoch boundaries are detected from the timestamp.
    pub fn access(&mut self, bank: BankId, row: Row, now_ns: u64) -> Option<RefreshEvent> {
        match self {
            MitigationPolicy::Sca(s) => s.access(bank, row, now_ns),
            MitigationPolicy::Pra(s) => s.access(bank, row, now_ns),
            MitigationPolicy::Prcat(s) => s.access(bank, row, now_ns),
            MitigationPolicy::Drcat(s) => s.access(bank, row, now_ns),
        }
    }

    pub fn tree(&self) -> Option<&CatState> {
        match self {
            MitigationPolicy::Prcat(s) => Some(s.tree()),
            MitigationPolicy::Drcat(s) => Some(s.tree()),
            _ => None,
        }
    }
}
