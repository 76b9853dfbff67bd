//! Shared domain types: bank configuration, access/refresh events and traces.

use std::fmt;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default auto-refresh interval (64 ms).
pub const DEFAULT_REFRESH_INTERVAL_NS: u64 = 64_000_000;

/// Default spacing between accesses for traces without timing information.
pub const DEFAULT_ACCESS_GAP_NS: u64 = 10;

pub type Row = u32;
pub type BankId = u32;

/// Static parameters of one simulated bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BankConfig {
    pub n_rows: u32,
    pub m_counters: u32,
    pub max_levels: u32,
    pub refresh_threshold: u32,
    pub presplit_levels: u32,
    #[serde(default = "default_refresh_interval")]
    pub refresh_interval_ns: u64,
}

fn default_refresh_interval() -> u64 {
    DEFAULT_REFRESH_INTERVAL_NS
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("n_rows must be positive")]
    ZeroRows,
    #[error("m_counters must be a positive power of two (got {0})")]
    CountersNotPowerOfTwo(u32),
    #[error("max_levels must be in 1..=32 (got {0})")]
    BadLevels(u32),
    #[error("refresh_threshold must be positive")]
    ZeroThreshold,
    #[error("refresh_interval_ns must be positive")]
    ZeroInterval,
    #[error("M > 2^(L-1): {m} counters cannot fit a tree of {l} levels")]
    TooManyCounters { m: u32, l: u32 },
    #[error("n_rows ({n}) is not divisible by 2^(L-1) = {leaves}")]
    RowsNotDivisible { n: u32, leaves: u64 },
    #[error("presplit_levels must satisfy 1 <= lambda <= log2(M) (got {lambda}, log2(M) = {max})")]
    BadPresplit { lambda: u32, max: u32 },
}

impl BankConfig {
    /// Paper-scale defaults: 64K rows, 64 counters, 11 levels, T = 32K, balanced pre-split.
    pub fn paper_default() -> Self {
        BankConfig {
            n_rows: 65_536,
            m_counters: 64,
            max_levels: 11,
            refresh_threshold: 32_768,
            presplit_levels: 6,
            refresh_interval_ns: DEFAULT_REFRESH_INTERVAL_NS,
        }
    }

    /// log2 of the counter count.
    pub fn counter_bits(&self) -> u32 {
        self.m_counters.trailing_zeros()
    }

    /// Largest legal pre-split depth; 1 for the degenerate single-counter bank.
    pub fn max_presplit(&self) -> u32 {
        self.counter_bits().max(1)
    }

    /// Rows covered by one leaf at the given depth.
    pub fn rows_at_depth(&self, depth: u32) -> u32 {
        self.n_rows >> depth.min(31)
    }

    /// Checks every invariant and reports the first one violated.
    pub fn validate(self) -> Result<Self, ConfigError> {
        if self.n_rows == 0 {
            return Err(ConfigError::ZeroRows);
        }
        if self.m_counters == 0 || !self.m_counters.is_power_of_two() {
            return Err(ConfigError::CountersNotPowerOfTwo(self.m_counters));
        }
        if self.max_levels == 0 || self.max_levels > 32 {
            return Err(ConfigError::BadLevels(self.max_levels));
        }
        if self.refresh_threshold == 0 {
            return Err(ConfigError::ZeroThreshold);
        }
        if self.refresh_interval_ns == 0 {
            return Err(ConfigError::ZeroInterval);
        }
        let leaves = 1u64 << (self.max_levels - 1);
        if u64::from(self.m_counters) > leaves {
            return Err(ConfigError::TooManyCounters {
                m: self.m_counters,
                l: self.max_levels,
            });
        }
        if u64::from(self.n_rows) % leaves != 0 {
            return Err(ConfigError::RowsNotDivisible {
                n: self.n_rows,
                leaves,
            });
        }
        if self.presplit_levels == 0 || self.presplit_levels > self.max_presplit() {
            return Err(ConfigError::BadPresplit {
                lambda: self.presplit_levels,
                max: self.max_presplit(),
            });
        }
        Ok(self)
    }
}

/// Free-function form used by the CLI and tests.
pub fn validate_config(cfg: BankConfig) -> Result<BankConfig, ConfigError> {
    cfg.validate()
}

/// One row activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessEvent {
    pub timestamp_ns: u64,
    pub bank: BankId,
    pub row: Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefreshCause {
    ThresholdLeaf,
    ScaGroup,
    PraNeighbors,
    EpochReset,
}

impl fmt::Display for RefreshCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefreshCause::ThresholdLeaf => "threshold-leaf",
            RefreshCause::ScaGroup => "sca-group",
            RefreshCause::PraNeighbors => "pra-neighbors",
            RefreshCause::EpochReset => "epoch-reset",
        })
    }
}

/// A victim-refresh command over an inclusive row range.
///
/// PRA events refresh the two neighbours of `aggressor` but not the aggressor itself;
/// for every other cause the whole range is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RefreshEvent {
    pub bank: BankId,
    pub low_row: Row,
    pub high_row: Row,
    pub cause: RefreshCause,
    pub timestamp_ns: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggressor: Option<Row>,
}

impl RefreshEvent {
    /// Range `[low - 1, high + 1]` clamped to the bank.
    pub fn widened(
        bank: BankId,
        low: Row,
        high: Row,
        n_rows: u32,
        cause: RefreshCause,
        timestamp_ns: u64,
    ) -> Self {
        RefreshEvent {
            bank,
            low_row: low.saturating_sub(1),
            high_row: (high + 1).min(n_rows - 1),
            cause,
            timestamp_ns,
            aggressor: None,
        }
    }

    /// Victims of a single aggressor; `None` for a one-row bank.
    pub fn neighbors(bank: BankId, row: Row, n_rows: u32, timestamp_ns: u64) -> Option<Self> {
        if n_rows < 2 {
            return None;
        }
        Some(RefreshEvent {
            bank,
            low_row: row.saturating_sub(1),
            high_row: (row + 1).min(n_rows - 1),
            cause: RefreshCause::PraNeighbors,
            timestamp_ns,
            aggressor: Some(row),
        })
    }

    /// Number of rows actually refreshed.
    pub fn rows(&self) -> u64 {
        let span = u64::from(self.high_row - self.low_row) + 1;
        match self.aggressor {
            Some(a) if (self.low_row..=self.high_row).contains(&a) => span - 1,
            _ => span,
        }
    }

    pub fn refreshes(&self, row: Row) -> bool {
        (self.low_row..=self.high_row).contains(&row) && self.aggressor != Some(row)
    }

    /// Aggressor rows whose every neighbour is refreshed by this event.
    pub fn protected_rows(&self, n_rows: u32) -> std::ops::RangeInclusive<Row> {
        if let Some(a) = self.aggressor {
            return a..=a;
        }
        let covered =
            |r: Row| (r == 0 || self.refreshes(r - 1)) && (r + 1 >= n_rows || self.refreshes(r + 1));
        let first = self.low_row.saturating_sub(1);
        let last = (self.high_row + 1).min(n_rows - 1);
        // Protected rows form one interval; only its ends need searching.
        let lo = (first..=last).find(|&r| covered(r));
        let hi = (first..=last).rev().find(|&r| covered(r));
        match (lo, hi) {
            (Some(lo), Some(hi)) => lo..=hi,
            // Nothing protected: an empty range.
            #[allow(clippy::reversed_empty_ranges)]
            _ => 1..=0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub generator: String,
    pub seed: Option<u64>,
    pub banks: u32,
}

/// An ordered access stream.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub meta: TraceMeta,
    pub events: Vec<AccessEvent>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: timestamp {ts} is earlier than the previous event ({prev})")]
    Ordering { line: usize, ts: u64, prev: u64 },
    #[error("event {index}: row {row} out of range for a bank of {n_rows} rows")]
    RowOutOfRange { index: usize, row: Row, n_rows: u32 },
    #[error("event {index}: bank {bank} out of range ({banks} banks)")]
    BankOutOfRange { index: usize, bank: BankId, banks: u32 },
    #[error("binary trace length {0} is not a multiple of 16 bytes")]
    Truncated(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    /// `<timestamp_ns> <bank> <row>` per line, `#` comments.
    Text,
    /// Untimed `<bank> <row>` per line; timestamps are assigned from a fixed gap.
    Untimed { gap_ns: u64 },
    /// Little-endian `u64 timestamp, u32 bank, u32 row` records.
    Binary,
}

impl Trace {
    pub fn new(meta: TraceMeta, events: Vec<AccessEvent>) -> Self {
        Trace { meta, events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Number of banks the trace addresses (metadata or highest bank id seen).
    pub fn bank_count(&self) -> u32 {
        let seen = self.events.iter().map(|e| e.bank + 1).max().unwrap_or(0);
        self.meta.banks.max(seen).max(1)
    }

    /// Checks every row against the bank size and bank ids against `banks`.
    pub fn check_bounds(&self, n_rows: u32, banks: u32) -> Result<(), TraceError> {
        for (index, e) in self.events.iter().enumerate() {
            if e.row >= n_rows {
                return Err(TraceError::RowOutOfRange {
                    index,
                    row: e.row,
                    n_rows,
                });
            }
            if e.bank >= banks {
                return Err(TraceError::BankOutOfRange {
                    index,
                    bank: e.bank,
                    banks,
                });
            }
        }
        Ok(())
    }

    /// Events of one bank, in order.
    pub fn bank_events(&self, bank: BankId) -> impl Iterator<Item = &AccessEvent> + '_ {
        self.events.iter().filter(move |e| e.bank == bank)
    }

    /// Writes the text format; metadata goes into leading comments.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# generator: {}", self.meta.generator)?;
        if let Some(seed) = self.meta.seed {
            writeln!(out, "# seed: {seed}")?;
        }
        writeln!(out, "# banks: {}", self.meta.banks)?;
        for e in &self.events {
            writeln!(out, "{} {} {}", e.timestamp_ns, e.bank, e.row)?;
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.events {
            out.write_all(&e.timestamp_ns.to_le_bytes())?;
            out.write_all(&e.bank.to_le_bytes())?;
            out.write_all(&e.row.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Parses a trace from `source`.
pub fn load_trace<R: Read>(source: R, format: TraceFormat) -> Result<Trace, TraceError> {
    match format {
        TraceFormat::Binary => load_binary(source),
        TraceFormat::Text => load_text(source, None),
        TraceFormat::Untimed { gap_ns } => load_text(source, Some(gap_ns)),
    }
}

fn load_text<R: Read>(source: R, untimed_gap: Option<u64>) -> Result<Trace, TraceError> {
    let reader = std::io::BufReader::new(source);
    let mut meta = TraceMeta::default();
    let mut events = Vec::new();
    let mut prev = 0u64;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let (body, comment) = match line.find('#') {
            Some(pos) => (&line[..pos], Some(&line[pos + 1..])),
            None => (line.as_str(), None),
        };
        if let Some(c) = comment {
            parse_meta_comment(c.trim(), &mut meta);
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let parse = |s: &str, what: &str| {
            s.parse::<u64>().map_err(|_| TraceError::Parse {
                line: line_no,
                msg: format!("invalid {what} {s:?}"),
            })
        };
        let (ts, bank, row) = match (untimed_gap, fields.len()) {
            (None, 3) => (
                parse(fields[0], "timestamp")?,
                parse(fields[1], "bank")?,
                parse(fields[2], "row")?,
            ),
            (Some(gap), 2) => (
                events.len() as u64 * gap,
                parse(fields[0], "bank")?,
                parse(fields[1], "row")?,
            ),
            (_, n) => {
                return Err(TraceError::Parse {
                    line: line_no,
                    msg: format!(
                        "expected {} fields, found {n}",
                        if untimed_gap.is_some() { 2 } else { 3 }
                    ),
                })
            }
        };
        let narrow = |v: u64, what: &str| {
            u32::try_from(v).map_err(|_| TraceError::Parse {
                line: line_no,
                msg: format!("{what} {v} does not fit in 32 bits"),
            })
        };
        let bank = narrow(bank, "bank")?;
        let row = narrow(row, "row")?;
        if !events.is_empty() && ts < prev {
            return Err(TraceError::Ordering {
                line: line_no,
                ts,
                prev,
            });
        }
        prev = ts;
        events.push(AccessEvent {
            timestamp_ns: ts,
            bank,
            row,
        });
    }
    Ok(Trace { meta, events })
}

fn parse_meta_comment(c: &str, meta: &mut TraceMeta) {
    if let Some((key, value)) = c.split_once(':') {
        let value = value.trim();
        match key.trim() {
            "generator" => meta.generator = value.to_string(),
            "seed" => meta.seed = value.parse().ok(),
            "banks" => meta.banks = value.parse().unwrap_or(0),
            _ => {}
        }
    }
}

fn load_binary<R: Read>(mut source: R) -> Result<Trace, TraceError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    if buf.len() % 16 != 0 {
        return Err(TraceError::Truncated(buf.len()));
    }
    let mut events = Vec::with_capacity(buf.len() / 16);
    let mut prev = 0u64;
    for (i, rec) in buf.chunks_exact(16).enumerate() {
        let ts = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let bank = u32::from_le_bytes(rec[8..12].try_into().unwrap());
        let row = u32::from_le_bytes(rec[12..16].try_into().unwrap());
        if i > 0 && ts < prev {
            return Err(TraceError::Ordering {
                line: i + 1,
                ts,
                prev,
            });
        }
        prev = ts;
        events.push(AccessEvent {
            timestamp_ns: ts,
            bank,
            row,
        });
    }
    Ok(Trace {
        meta: TraceMeta::default(),
        events,
    })
}
