//! Exact per-row activation bookkeeping used to check that a policy never lets
//! a row reach the refresh threshold without its victims being refreshed.

use serde::{Deserialize, Serialize};

use crate::model::{BankConfig, BankId, RefreshEvent, Row};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub bank: BankId,
    pub row: Row,
    pub timestamp_ns: u64,
}

/// Activations of every row since both of its neighbours were last refreshed.
/// The burst auto-refresh at each interval boundary clears everything.
#[derive(Debug, Clone)]
pub struct SafetyOracle {
    bank: BankId,
    n_rows: u32,
    threshold: u32,
    interval_ns: u64,
    epoch: Option<u64>,
    counts: Vec<u32>,
    violations: Vec<Violation>,
}

impl SafetyOracle {
    pub fn new(bank: BankId, cfg: &BankConfig) -> Self {
        SafetyOracle {
            bank,
            n_rows: cfg.n_rows,
            threshold: cfg.refresh_threshold,
            interval_ns: cfg.refresh_interval_ns,
            epoch: None,
            counts: vec![0; cfg.n_rows as usize],
            violations: Vec::new(),
        }
    }

    pub fn count(&self, row: Row) -> u32 {
        self.counts[row as usize]
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    /// Records one activation and the refresh the policy issued for it, if any.
    pub fn observe(&mut self, row: Row, now_ns: u64, event: Option<&RefreshEvent>) -> Option<Violation> {
        let e = now_ns / self.interval_ns;
        if self.epoch != Some(e) {
            self.counts.iter_mut().for_each(|c| *c = 0);
            self.epoch = Some(e);
        }
        self.counts[row as usize] += 1;
        if let Some(ev) = event {
            for r in ev.protected_rows(self.n_rows) {
                self.counts[r as usize] = 0;
            }
        }
        if self.counts[row as usize] >= self.threshold {
            self.counts[row as usize] = 0;
            let v = Violation {
                bank: self.bank,
                row,
                timestamp_ns: now_ns,
            };
            self.violations.push(v);
            return Some(v);
        }
        None
    }
}
