//! Split thresholds and the four-group refresh-cost model.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Where a threshold list came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Published values or the closed-form small-tree rules.
    Published,
    /// Loaded from a user-supplied table.
    Table,
    /// Produced by [`heuristic_thresholds`].
    Heuristic,
    /// Supplied directly by a caller (tests, hand-built trees).
    Custom,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Published => "published",
            Provenance::Table => "table",
            Provenance::Heuristic => "heuristic",
            Provenance::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ThresholdError {
    #[error("no published split thresholds for M={m}, L={l}, T={t}")]
    Unsupported { m: u32, l: u32, t: u32 },
    #[error("threshold list is empty")]
    Empty,
    #[error("thresholds must be positive")]
    NonPositive,
    #[error("thresholds must be non-decreasing (T_{level} = {value} < previous)")]
    Decreasing { level: u32, value: u32 },
    #[error("last threshold must equal T = {t} (got {last})")]
    LastNotT { t: u32, last: u32 },
    #[error("threshold list covers levels {first}..={last} but the tree's last level is {expected}")]
    LevelMismatch { first: u32, last: u32, expected: u32 },
}

/// Split thresholds `T_first ..= T_{L-1}`; the last entry is the refresh threshold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitThresholds {
    first_level: u32,
    values: Vec<u32>,
    provenance: Provenance,
}

impl SplitThresholds {
    pub fn new(first_level: u32, values: Vec<u32>, provenance: Provenance) -> Result<Self, ThresholdError> {
        if values.is_empty() {
            return Err(ThresholdError::Empty);
        }
        if values.contains(&0) {
            return Err(ThresholdError::NonPositive);
        }
        for (i, w) in values.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(ThresholdError::Decreasing {
                    level: first_level + i as u32 + 1,
                    value: w[1],
                });
            }
        }
        Ok(SplitThresholds {
            first_level,
            values,
            provenance,
        })
    }

    /// Thresholds ending at level `max_levels - 1`.
    pub fn ending_at(
        max_levels: u32,
        values: Vec<u32>,
        provenance: Provenance,
    ) -> Result<Self, ThresholdError> {
        let len = values.len() as u32;
        if len == 0 {
            return Err(ThresholdError::Empty);
        }
        if len > max_levels {
            return Err(ThresholdError::LevelMismatch {
                first: 0,
                last: len - 1,
                expected: max_levels - 1,
            });
        }
        Self::new(max_levels - len, values, provenance)
    }

    pub fn first_level(&self) -> u32 {
        self.first_level
    }

    pub fn last_level(&self) -> u32 {
        self.first_level + self.values.len() as u32 - 1
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// The refresh threshold `T`.
    pub fn refresh_threshold(&self) -> u32 {
        *self.values.last().expect("non-empty")
    }

    /// Threshold for a counter at `level`. Levels above the table use the first
    /// entry halved once per missing level.
    pub fn at(&self, level: u32) -> u32 {
        if level >= self.first_level {
            let idx = ((level - self.first_level) as usize).min(self.values.len() - 1);
            self.values[idx]
        } else {
            let shift = (self.first_level - level).min(31);
            (self.values[0] >> shift).max(1)
        }
    }

    /// Checks that the list ends at the tree's last level with `T`.
    pub fn check_against(&self, max_levels: u32, t: u32) -> Result<(), ThresholdError> {
        if self.last_level() != max_levels - 1 {
            return Err(ThresholdError::LevelMismatch {
                first: self.first_level,
                last: self.last_level(),
                expected: max_levels - 1,
            });
        }
        if self.refresh_threshold() != t {
            return Err(ThresholdError::LastNotT {
                t,
                last: self.refresh_threshold(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for SplitThresholds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| format!("T{}={}", self.first_level as usize + i, v))
            .collect();
        write!(f, "[{}] ({})", parts.join(", "), self.provenance)
    }
}

/// Published thresholds for M=64, L=10, T=32768.
pub const PUBLISHED_64_10_32768: [u32; 5] = [5155, 10309, 12886, 16384, 32768];

/// Thresholds with published support.
///
/// Covers the 64-counter list, the four-counter rule `[T/4, T/2, T]` ending at
/// level `L-1` (for `L` of 3 or 4) and the single split point `[T/2, T]` of a
/// two-counter, two-level tree.
pub fn paper_thresholds(m: u32, l: u32, t: u32) -> Result<SplitThresholds, ThresholdError> {
    let unsupported = ThresholdError::Unsupported { m, l, t };
    match (m, l, t) {
        (64, 10, 32768) => {
            SplitThresholds::ending_at(l, PUBLISHED_64_10_32768.to_vec(), Provenance::Published)
        }
        (4, 3 | 4, _) if t >= 4 => {
            SplitThresholds::ending_at(l, vec![t / 4, t / 2, t], Provenance::Published)
        }
        (2, 2, _) if t >= 2 => SplitThresholds::ending_at(l, vec![t / 2, t], Provenance::Published),
        _ => Err(unsupported),
    }
}

/// A documented extension of the published anchors to arbitrary `(M, L, T)`.
///
/// Starts at level `log2(M) - 1` (the leaves of a balanced pre-split tree), or
/// lower so that at least three levels are covered when `L` allows. Pins
/// `T_{L-1} = T`, `T_{L-2} = T/2`, `T_{first+1} = T/4` and
/// `T_first = T_{first+1} / 2`; the levels between `T/4` and `T/2` are
/// geometrically interpolated. Values round down.
pub fn heuristic_thresholds(m: u32, l: u32, t: u32) -> SplitThresholds {
    let first = m.trailing_zeros().saturating_sub(1).min(l.saturating_sub(3));
    let k = (l - first) as usize;
    let mut v = vec![0u32; k];
    v[k - 1] = t;
    if k >= 2 {
        v[k - 2] = t / 2;
    }
    if k >= 3 {
        // Indices 1..=k-2 run geometrically from T/4 to T/2.
        let span = (k - 3) as f64;
        for (i, slot) in v.iter_mut().enumerate().take(k - 1).skip(1) {
            let frac = if span == 0.0 { 1.0 } else { (i - 1) as f64 / span };
            *slot = (t as f64 / 4.0 * 2f64.powf(frac)).floor() as u32;
        }
        v[k - 2] = t / 2;
        v[0] = v[1] / 2;
    }
    for x in v.iter_mut() {
        *x = (*x).max(1);
    }
    // Monotone by construction; the clamp above keeps tiny T legal.
    for i in 1..k {
        if v[i] < v[i - 1] {
            v[i] = v[i - 1];
        }
    }
    SplitThresholds::new(first, v, Provenance::Heuristic).expect("heuristic output is valid")
}

/// User-supplied thresholds keyed by `(M, L, T)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdTable {
    entries: BTreeMap<(u32, u32, u32), Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdTableEntry {
    pub m: u32,
    pub l: u32,
    pub t: u32,
    pub values: Vec<u32>,
}

impl ThresholdTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, m: u32, l: u32, t: u32, values: Vec<u32>) -> Result<(), ThresholdError> {
        let th = SplitThresholds::ending_at(l, values.clone(), Provenance::Table)?;
        th.check_against(l, t)?;
        self.entries.insert((m, l, t), values);
        Ok(())
    }

    pub fn from_entries(entries: &[ThresholdTableEntry]) -> Result<Self, ThresholdError> {
        let mut table = Self::new();
        for e in entries {
            table.insert(e.m, e.l, e.t, e.values.clone())?;
        }
        Ok(table)
    }

    pub fn get(&self, m: u32, l: u32, t: u32) -> Option<SplitThresholds> {
        self.entries.get(&(m, l, t)).map(|v| {
            SplitThresholds::ending_at(l, v.clone(), Provenance::Table).expect("validated on insert")
        })
    }
}

/// Published values first, then the table, then the heuristic.
pub fn resolve_thresholds(m: u32, l: u32, t: u32, table: Option<&ThresholdTable>) -> SplitThresholds {
    if let Ok(th) = paper_thresholds(m, l, t) {
        return th;
    }
    if let Some(th) = table.and_then(|tb| tb.get(m, l, t)) {
        return th;
    }
    heuristic_thresholds(m, l, t)
}

/// Inputs of the four-group cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostInputs {
    /// Rows per unit group (`N/4` in the four-counter example).
    pub w: f64,
    /// References per refresh interval.
    pub r: f64,
    /// Refresh threshold.
    pub t: f64,
    /// Extra references aimed at the hottest group.
    pub x: f64,
}

/// Refreshed rows for a uniform four-counter partition.
pub fn cost_sca(inp: &CostInputs) -> f64 {
    inp.w * inp.r / inp.t
}

/// Refreshed rows for the unbalanced four-counter tree.
pub fn cost_cat(inp: &CostInputs) -> f64 {
    let w = inp.w;
    let alpha = inp.r / (inp.x + 4.0 * w);
    let bracket = (2.0 * w).powi(2) + w * w + (w / 2.0).powi(2) + (inp.x + w / 2.0) * (w / 2.0);
    bracket * alpha / inp.t
}

/// Bias above which the unbalanced tree refreshes fewer rows: `cost_cat < cost_sca`
/// exactly when `x > critical_bias(w)`.
pub fn critical_bias(w: f64) -> f64 {
    3.0 * w
}
