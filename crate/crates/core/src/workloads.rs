//! Synthetic activation traces.
//!
//! Accesses are spaced by a fixed gap and assigned to banks round-robin.
//! Region-mix generators (reference-ratio and hotspot shift) interleave
//! regions deterministically so per-region tallies are exact to within one;
//! only the row inside a region is random.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, Normal};
use thiserror::Error;

use crate::model::{AccessEvent, Row, Trace, TraceMeta, DEFAULT_ACCESS_GAP_NS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("bank has no rows")]
    NoRows,
    #[error("banks must be positive")]
    NoBanks,
    #[error("invalid parameter {name}: {msg}")]
    Invalid { name: &'static str, msg: String },
}

fn invalid(name: &'static str, msg: impl Into<String>) -> WorkloadError {
    WorkloadError::Invalid {
        name,
        msg: msg.into(),
    }
}

/// Named attack intensities: share of accesses that go to target rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Heavy,
    Medium,
    Light,
    Benign,
}

impl AttackMode {
    pub fn fraction(self) -> f64 {
        match self {
            AttackMode::Heavy => 0.75,
            AttackMode::Medium => 0.5,
            AttackMode::Light => 0.25,
            AttackMode::Benign => 0.0,
        }
    }
}

fn default_targets() -> u32 {
    4
}

/// Share of references aimed at rows `[low, high)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMix {
    pub low: Row,
    pub high: Row,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub references: u64,
    pub regions: Vec<RegionMix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WorkloadKind {
    Uniform {
        references: u64,
    },
    /// Four regions of the left-skewed four-counter tree, referenced in the
    /// ratio `2w : w : w/2 : x + w/2` with `w = N/4` and `x = x_over_w * w`.
    #[serde(alias = "biased")]
    ReferenceRatio {
        references: u64,
        x_over_w: f64,
    },
    GaussianAttack {
        references: u64,
        mode: AttackMode,
        #[serde(default = "default_targets")]
        targets_per_bank: u32,
    },
    /// Gaussian attack with an arbitrary attack fraction.
    MixedAttack {
        references: u64,
        attack_fraction: f64,
        #[serde(default = "default_targets")]
        targets_per_bank: u32,
    },
    HotspotShift {
        phases: Vec<Phase>,
    },
}

fn default_banks() -> u32 {
    1
}

fn default_gap() -> u64 {
    DEFAULT_ACCESS_GAP_NS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    #[serde(flatten)]
    pub kind: WorkloadKind,
    #[serde(default = "default_banks")]
    pub banks: u32,
    #[serde(default = "default_gap")]
    pub gap_ns: u64,
    #[serde(default)]
    pub start_ns: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind) -> Self {
        WorkloadSpec {
            kind,
            banks: 1,
            gap_ns: DEFAULT_ACCESS_GAP_NS,
            start_ns: 0,
        }
    }

    pub fn with_banks(mut self, banks: u32) -> Self {
        self.banks = banks;
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            WorkloadKind::Uniform { .. } => "uniform",
            WorkloadKind::ReferenceRatio { .. } => "reference-ratio",
            WorkloadKind::GaussianAttack { .. } => "gaussian-attack",
            WorkloadKind::MixedAttack { .. } => "mixed-attack",
            WorkloadKind::HotspotShift { .. } => "hotspot-shift",
        }
    }

    /// Generates the trace for a bank of `n_rows` rows.
    pub fn generate(&self, n_rows: u32, seed: u64) -> Result<Trace, WorkloadError> {
        match &self.kind {
            WorkloadKind::Uniform { references } => gen_uniform(self, n_rows, *references, seed),
            WorkloadKind::ReferenceRatio { references, x_over_w } => {
                gen_reference_ratio(self, n_rows, *references, *x_over_w, seed)
            }
            WorkloadKind::GaussianAttack {
                references,
                mode,
                targets_per_bank,
            } => gen_gaussian_attack(
                self,
                n_rows,
                *references,
                mode.fraction(),
                *targets_per_bank,
                seed,
            ),
            WorkloadKind::MixedAttack {
                references,
                attack_fraction,
                targets_per_bank,
            } => gen_gaussian_attack(
                self,
                n_rows,
                *references,
                *attack_fraction,
                *targets_per_bank,
                seed,
            ),
            WorkloadKind::HotspotShift { phases } => gen_hotspot_shift(self, n_rows, phases, seed),
        }
    }
}

struct Emitter {
    events: Vec<AccessEvent>,
    banks: u32,
    gap: u64,
    next_ts: u64,
}

impl Emitter {
    fn new(spec: &WorkloadSpec, capacity: u64) -> Result<Self, WorkloadError> {
        if spec.banks == 0 {
            return Err(WorkloadError::NoBanks);
        }
        Ok(Emitter {
            events: Vec::with_capacity(capacity.min(1 << 28) as usize),
            banks: spec.banks,
            gap: spec.gap_ns,
            next_ts: spec.start_ns,
        })
    }

    fn push(&mut self, row: Row) {
        let bank = (self.events.len() as u64 % u64::from(self.banks)) as u32;
        self.events.push(AccessEvent {
            timestamp_ns: self.next_ts,
            bank,
            row,
        });
        self.next_ts += self.gap;
    }

    fn finish(self, generator: &str, seed: u64) -> Trace {
        let banks = self.banks;
        Trace::new(
            TraceMeta {
                generator: generator.to_string(),
                seed: Some(seed),
                banks,
            },
            self.events,
        )
    }
}

fn check_rows(n_rows: u32) -> Result<(), WorkloadError> {
    if n_rows == 0 {
        Err(WorkloadError::NoRows)
    } else {
        Ok(())
    }
}

/// Rows i.i.d. uniform over the bank.
pub fn gen_uniform(
    spec: &WorkloadSpec,
    n_rows: u32,
    references: u64,
    seed: u64,
) -> Result<Trace, WorkloadError> {
    check_rows(n_rows)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Emitter::new(spec, references)?;
    for _ in 0..references {
        out.push(rng.gen_range(0..n_rows));
    }
    Ok(out.finish("uniform", seed))
}

/// The four regions and weights of the reference-ratio model.
pub fn reference_ratio_regions(n_rows: u32, x_over_w: f64) -> Vec<RegionMix> {
    let w = 1.0;
    let x = x_over_w * w;
    let q = n_rows / 8;
    vec![
        RegionMix {
            low: 0,
            high: 4 * q,
            weight: 2.0 * w,
        },
        RegionMix {
            low: 4 * q,
            high: 6 * q,
            weight: w,
        },
        RegionMix {
            low: 6 * q,
            high: 7 * q,
            weight: w / 2.0,
        },
        RegionMix {
            low: 7 * q,
            high: n_rows,
            weight: x + w / 2.0,
        },
    ]
}

/// Reference counts the interleave assigns to each region for `references` draws.
pub fn region_tallies(regions: &[RegionMix], references: u64) -> Vec<u64> {
    let mut counts = vec![0u64; regions.len()];
    let mut il = Interleave::new(regions);
    for _ in 0..references {
        counts[il.next()] += 1;
    }
    counts
}

/// Deterministic largest-deficit schedule over weighted regions.
struct Interleave {
    shares: Vec<f64>,
    emitted: Vec<u64>,
    step: u64,
}

impl Interleave {
    fn new(regions: &[RegionMix]) -> Self {
        let total: f64 = regions.iter().map(|r| r.weight).sum();
        Interleave {
            shares: regions.iter().map(|r| r.weight / total).collect(),
            emitted: vec![0; regions.len()],
            step: 0,
        }
    }

    fn next(&mut self) -> usize {
        self.step += 1;
        let step = self.step as f64;
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for (i, (&s, &e)) in self.shares.iter().zip(&self.emitted).enumerate() {
            let d = s * step - e as f64;
            if d > best_deficit {
                best = i;
                best_deficit = d;
            }
        }
        self.emitted[best] += 1;
        best
    }
}

fn check_regions(regions: &[RegionMix], n_rows: u32) -> Result<(), WorkloadError> {
    if regions.is_empty() {
        return Err(invalid("regions", "at least one region is required"));
    }
    for r in regions {
        if r.low >= r.high || r.high > n_rows {
            return Err(invalid(
                "regions",
                format!("[{}, {}) is not a row range of the bank", r.low, r.high),
            ));
        }
        if !(r.weight >= 0.0 && r.weight.is_finite()) {
            return Err(invalid(
                "regions",
                format!("weight {} must be finite and >= 0", r.weight),
            ));
        }
    }
    if regions.iter().all(|r| r.weight == 0.0) {
        return Err(invalid("regions", "all weights are zero"));
    }
    Ok(())
}

fn emit_phase(out: &mut Emitter, rng: &mut ChaCha12Rng, regions: &[RegionMix], references: u64) {
    let mut il = Interleave::new(regions);
    for _ in 0..references {
        let r = &regions[il.next()];
        out.push(rng.gen_range(r.low..r.high));
    }
}

/// Reference-ratio trace: exact per-region tallies, random row within a region.
pub fn gen_reference_ratio(
    spec: &WorkloadSpec,
    n_rows: u32,
    references: u64,
    x_over_w: f64,
    seed: u64,
) -> Result<Trace, WorkloadError> {
    check_rows(n_rows)?;
    if n_rows < 8 {
        return Err(invalid("n_rows", "reference-ratio needs at least 8 rows"));
    }
    if !(x_over_w >= 0.0 && x_over_w.is_finite()) {
        return Err(invalid("x_over_w", "must be finite and >= 0"));
    }
    let phase = Phase {
        references,
        regions: reference_ratio_regions(n_rows, x_over_w),
    };
    gen_phases(
        spec,
        n_rows,
        std::slice::from_ref(&phase),
        seed,
        "reference-ratio",
    )
}

/// Concatenated region-mix phases; the hot region usually moves between phases.
pub fn gen_hotspot_shift(
    spec: &WorkloadSpec,
    n_rows: u32,
    phases: &[Phase],
    seed: u64,
) -> Result<Trace, WorkloadError> {
    check_rows(n_rows)?;
    if phases.is_empty() {
        return Err(invalid("phases", "at least one phase is required"));
    }
    gen_phases(spec, n_rows, phases, seed, "hotspot-shift")
}

fn gen_phases(
    spec: &WorkloadSpec,
    n_rows: u32,
    phases: &[Phase],
    seed: u64,
    name: &str,
) -> Result<Trace, WorkloadError> {
    for p in phases {
        check_regions(&p.regions, n_rows)?;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Emitter::new(spec, phases.iter().map(|p| p.references).sum())?;
    for p in phases {
        emit_phase(&mut out, &mut rng, &p.regions, p.references);
    }
    Ok(out.finish(name, seed))
}

/// A hot region receiving `hot_share` of the references on top of uniform background.
pub fn hotspot_phase(n_rows: u32, hot: std::ops::Range<Row>, hot_share: f64, references: u64) -> Phase {
    Phase {
        references,
        regions: vec![
            RegionMix {
                low: hot.start,
                high: hot.end,
                weight: hot_share,
            },
            RegionMix {
                low: 0,
                high: n_rows,
                weight: 1.0 - hot_share,
            },
        ],
    }
}

/// Discretised normal weights over target ranks, centred with sigma = k/2.
pub fn gaussian_target_weights(k: u32) -> Vec<f64> {
    let k = k.max(1);
    let mean = f64::from(k - 1) / 2.0;
    let sigma = f64::from(k) / 2.0;
    let normal = Normal::new(mean, sigma).expect("positive sigma");
    let w: Vec<f64> = (0..k).map(|i| normal.pdf(f64::from(i))).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Target rows (per bank) attacked with Gaussian weighting, mixed per access
/// with uniform benign rows.
pub fn gen_gaussian_attack(
    spec: &WorkloadSpec,
    n_rows: u32,
    references: u64,
    attack_fraction: f64,
    targets_per_bank: u32,
    seed: u64,
) -> Result<Trace, WorkloadError> {
    check_rows(n_rows)?;
    if !(0.0..=1.0).contains(&attack_fraction) {
        return Err(invalid(
            "attack_fraction",
            format!("{attack_fraction} is outside [0, 1]"),
        ));
    }
    if targets_per_bank == 0 || targets_per_bank > n_rows {
        return Err(invalid("targets_per_bank", format!("must be in 1..={n_rows}")));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Emitter::new(spec, references)?;
    let targets = pick_targets(&mut rng, n_rows, out.banks, targets_per_bank);
    let pick = WeightedIndex::new(gaussian_target_weights(targets_per_bank)).expect("positive weights");
    let name = if attack_fraction == 0.0 {
        "uniform"
    } else {
        "gaussian-attack"
    };
    for i in 0..references {
        let bank = (i % u64::from(out.banks)) as usize;
        let row = if attack_fraction > 0.0 && rng.gen_bool(attack_fraction) {
            targets[bank][pick.sample(&mut rng)]
        } else {
            rng.gen_range(0..n_rows)
        };
        out.push(row);
    }
    Ok(out.finish(name, seed))
}

/// Target rows `gen_gaussian_attack` picks for each bank with this seed.
pub fn attack_targets(n_rows: u32, banks: u32, targets_per_bank: u32, seed: u64) -> Vec<Vec<Row>> {
    pick_targets(
        &mut ChaCha12Rng::seed_from_u64(seed),
        n_rows,
        banks,
        targets_per_bank,
    )
}

fn pick_targets(rng: &mut ChaCha12Rng, n_rows: u32, banks: u32, targets_per_bank: u32) -> Vec<Vec<Row>> {
    (0..banks)
        .map(|_| {
            sample(rng, n_rows as usize, targets_per_bank as usize)
                .into_iter()
                .map(|r| r as Row)
                .collect()
        })
        .collect()
}
