//! Register-file reference for the count-once CAT algorithm: every counter
//! keeps explicit `[lo, hi]` bounds instead of a tree encoding.

use catsim::thresholds::{Provenance, SplitThresholds};
use catsim::BankConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Counter modules with explicit `[lo, hi]` registers and a threshold index.
pub struct RegisterCat {
    n: u32,
    m: usize,
    max_levels: u32,
    t_at: Vec<u32>,
    pub lo: Vec<u32>,
    pub hi: Vec<u32>,
    level: Vec<u32>,
    count: Vec<u32>,
    pub last_activated: usize,
}

impl RegisterCat {
    pub fn new(cfg: &BankConfig, t_at: Vec<u32>) -> Self {
        let k = 1usize << (cfg.presplit_levels - 1);
        let m = cfg.m_counters as usize;
        let width = cfg.n_rows / k as u32;
        let mut r = RegisterCat {
            n: cfg.n_rows,
            m,
            max_levels: cfg.max_levels,
            t_at,
            lo: vec![0; m],
            hi: vec![0; m],
            level: vec![0; m],
            count: vec![0; m],
            last_activated: k - 1,
        };
        for i in 0..k {
            r.lo[i] = i as u32 * width;
            r.hi[i] = (i as u32 + 1) * width - 1;
            r.level[i] = cfg.presplit_levels - 1;
        }
        if r.last_activated == m - 1 {
            r.level.iter_mut().for_each(|l| *l = cfg.max_levels - 1);
        }
        r
    }

    pub fn access(&mut self, row: u32) -> Option<(u32, u32)> {
        let t = *self.t_at.last().unwrap();
        let mut i = (0..=self.last_activated)
            .find(|&i| self.lo[i] <= row && row <= self.hi[i])
            .expect("ranges cover the bank");
        self.count[i] = (self.count[i] + 1).min(t);
        loop {
            if self.count[i] < self.t_at[self.level[i] as usize] {
                return None;
            }
            if self.level[i] < self.max_levels - 1 && self.last_activated < self.m - 1 {
                self.last_activated += 1;
                let j = self.last_activated;
                self.count[j] = self.count[i];
                self.hi[j] = self.hi[i];
                self.hi[i] = (self.hi[i] + self.lo[i]) / 2;
                self.lo[j] = self.hi[i] + 1;
                self.level[i] += 1;
                self.level[j] = self.level[i];
                if self.last_activated == self.m - 1 {
                    self.level.iter_mut().for_each(|l| *l = self.max_levels - 1);
                }
                if row > self.hi[i] {
                    i = j;
                }
                continue;
            }
            self.count[i] = 0;
            return Some((self.lo[i].saturating_sub(1), (self.hi[i] + 1).min(self.n - 1)));
        }
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (BankConfig, SplitThresholds) {
    let m = 1u32 << rng.gen_range(0..=3);
    let min_l = m.trailing_zeros() + 1;
    let l = rng.gen_range(min_l..=7);
    let leaves = 1u32 << (l - 1);
    let n = leaves * rng.gen_range(1..=(64 / leaves).max(1));
    let n = n.min(64).max(leaves);
    let t = rng.gen_range(1..=64u32);
    let lambda = rng.gen_range(1..=m.trailing_zeros().max(1));
    let first = rng.gen_range(0..l);
    let len = (l - first) as usize;
    let mut values: Vec<u32> = (0..len - 1).map(|_| rng.gen_range(1..=t)).collect();
    values.sort_unstable();
    values.push(t);
    let cfg = BankConfig {
        n_rows: n,
        m_counters: m,
        max_levels: l,
        refresh_threshold: t,
        presplit_levels: lambda,
        refresh_interval_ns: 64_000_000,
    };
    let th = SplitThresholds::new(first, values, Provenance::Custom).unwrap();
    (cfg, th)
}
