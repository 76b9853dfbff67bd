//! Comparative simulations across schemes on shared traces.

use catsim::model::Trace;
use catsim::schemes::{CatSpec, SchemeSpec};
use catsim::sim::{compare, run_observed, EnergyModel, SimOptions};
use catsim::workloads::{hotspot_phase, AttackMode, WorkloadKind, WorkloadSpec};
use catsim::BankConfig;

fn bank(n_rows: u32, t: u32, interval_ns: u64) -> BankConfig {
    BankConfig {
        n_rows,
        m_counters: 1,
        max_levels: 1,
        refresh_threshold: t,
        presplit_levels: 1,
        refresh_interval_ns: interval_ns,
    }
}

fn rows(trace: &Trace, spec: &SchemeSpec, base: &BankConfig) -> u64 {
    run_observed(trace, spec, base, None, 0, &SimOptions::default(), |_, _| {}).unwrap()[0].rows_refreshed
}

/// Rows refreshed on behalf of accesses at index `from` and later.
fn rows_after(trace: &Trace, spec: &SchemeSpec, base: &BankConfig, from: usize) -> u64 {
    let mut i = 0;
    let mut total = 0;
    run_observed(trace, spec, base, None, 0, &SimOptions::default(), |_, ev| {
        if i >= from {
            total += ev.map_or(0, |e| e.rows());
        }
        i += 1;
    })
    .unwrap();
    total
}

fn shift_trace(n: u32, first: u64, second: u64, seed: u64) -> Trace {
    WorkloadSpec::new(WorkloadKind::HotspotShift {
        phases: vec![
            hotspot_phase(n, 0..512, 0.9, first),
            hotspot_phase(n, 32768..33280, 0.9, second),
        ],
    })
    .generate(n, seed)
    .unwrap()
}

fn cat() -> [SchemeSpec; 2] {
    [
        SchemeSpec::Drcat(CatSpec::new(64, 11)),
        SchemeSpec::Prcat(CatSpec::new(64, 11)),
    ]
}

#[test]
fn mid_epoch_shift_favours_drcat() {
    let n = 65536;
    let base = bank(n, 16384, 64_000_000);
    let [dr, pr] = cat();
    // Both phases fall inside the first 64 ms interval.
    let t = shift_trace(n, 3_200_000, 3_200_000, 1);
    let (d, p) = (
        rows_after(&t, &dr, &base, 3_200_000),
        rows_after(&t, &pr, &base, 3_200_000),
    );
    assert!(d < p, "DRCAT {d} vs PRCAT {p}");
}

#[test]
fn epoch_aligned_shift_costs_prcat_nothing() {
    let n = 65536;
    let base = bank(n, 16384, 64_000_000);
    let [dr, pr] = cat();
    // The second phase starts exactly at the second interval.
    let t = shift_trace(n, 6_400_000, 6_400_000, 1);
    assert_eq!(t.events[6_400_000].timestamp_ns, 64_000_000);
    let (d, p) = (
        rows_after(&t, &dr, &base, 6_400_000),
        rows_after(&t, &pr, &base, 6_400_000),
    );
    assert!(p <= d, "PRCAT {p} vs DRCAT {d}");
}

#[test]
fn heavy_attack_ordering_and_eto() {
    let n = 65536;
    let base = bank(n, 16384, 64_000_000);
    let mut w = WorkloadSpec::new(WorkloadKind::GaussianAttack {
        references: 1_280_000,
        mode: AttackMode::Heavy,
        targets_per_bank: 4,
    });
    w.gap_ns = 50;
    let t = w.generate(n, 2).unwrap();
    let [dr, pr] = cat();
    let specs = [
        dr,
        pr,
        SchemeSpec::Sca { counters: 256 },
        SchemeSpec::Sca { counters: 128 },
        SchemeSpec::Sca { counters: 64 },
        SchemeSpec::Sca { counters: 32 },
    ];
    let reps = compare(
        &t,
        &specs,
        &base,
        None,
        &EnergyModel::default(),
        0,
        &SimOptions::default(),
    )
    .unwrap();
    let rows: Vec<u64> = reps.iter().map(|r| r.aggregate.metrics.rows_refreshed).collect();
    assert!(rows[0] <= rows[1], "{rows:?}");
    assert!(rows[1..].windows(2).all(|w| w[0] < w[1]), "{rows:?}");
    let mut by_rows: Vec<(u64, f64)> = reps
        .iter()
        .map(|r| (r.aggregate.metrics.rows_refreshed, r.aggregate.eto))
        .collect();
    by_rows.sort_by_key(|x| x.0);
    assert!(by_rows.windows(2).all(|w| w[0].1 <= w[1].1), "{by_rows:?}");
}

#[test]
fn uniform_traffic_cat_matches_sca() {
    let n = 65536;
    let base = bank(n, 32768, 64_000_000);
    let t = WorkloadSpec::new(WorkloadKind::Uniform {
        references: 12_800_000,
    })
    .generate(n, 3)
    .unwrap();
    let sca = rows(&t, &SchemeSpec::Sca { counters: 64 }, &base) as f64;
    for spec in cat() {
        let r = rows(&t, &spec, &base) as f64;
        assert!((r / sca - 1.0).abs() <= 0.10, "{}: {r} vs {sca}", spec.label());
    }
}
