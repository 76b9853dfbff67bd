//! Random sources for probabilistic refresh.

use rand::distributions::Bernoulli;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// 32-bit Fibonacci LFSR, feedback polynomial x^32 + x^30 + x^26 + x^25 + 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lfsr32 {
    state: u32,
}

impl Lfsr32 {
    /// A zero seed would lock the register, so it is replaced by a fixed nonzero value.
    pub fn new(seed: u32) -> Self {
        Lfsr32 {
            state: if seed == 0 { 0xACE1_2468 } else { seed },
        }
    }

    pub fn from_u64(seed: u64) -> Self {
        Self::new((seed ^ (seed >> 32)) as u32)
    }

    pub fn state(&self) -> u32 {
        self.state
    }

    /// Shifts once and returns the output bit.
    #[inline]
    pub fn next_bit(&mut self) -> u32 {
        let s = self.state;
        let fb = (s ^ (s >> 2) ^ (s >> 6) ^ (s >> 7)) & 1;
        self.state = (s >> 1) | (fb << 31);
        s & 1
    }

    /// `n` fresh bits (n <= 32), first bit most significant.
    pub fn next_bits(&mut self, n: u32) -> u32 {
        (0..n).fold(0u32, |acc, _| (acc << 1) | self.next_bit())
    }
}

/// Independent seed for sub-stream `stream` of `base` (SplitMix64 finaliser).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PrngKind {
    /// Cryptographic-quality stream (ChaCha12).
    #[default]
    Quality,
    /// The 32-bit LFSR above.
    Lfsr,
}

/// Random bits consumed by one refresh decision at probability `p`.
pub fn bits_per_decision(p: f64) -> u32 {
    if p >= 1.0 {
        0
    } else {
        (1.0 / p).log2().ceil().max(1.0) as u32
    }
}

/// Probability the LFSR comparison actually realises for a nominal `p`.
pub fn lfsr_effective_p(p: f64) -> f64 {
    if p >= 1.0 {
        return 1.0;
    }
    let bits = bits_per_decision(p);
    let scale = 2f64.powi(bits as i32);
    (p * scale).floor().max(1.0) / scale
}

#[derive(Debug, Clone)]
enum Source {
    Quality(Box<ChaCha12Rng>),
    Lfsr(Lfsr32),
}

/// Per-probability constants, cached because callers draw at a fixed `p`.
#[derive(Debug, Clone, Copy)]
struct Decision {
    p: f64,
    bits: u32,
    cutoff: u32,
    dist: Bernoulli,
}

impl Decision {
    fn new(p: f64) -> Self {
        let bits = bits_per_decision(p);
        Decision {
            p,
            bits,
            cutoff: ((p * 2f64.powi(bits as i32)).floor() as u32).max(1),
            dist: Bernoulli::new(p).expect("p in (0, 1)"),
        }
    }
}

/// Seeded Bernoulli source that keeps count of the random bits it consumed.
#[derive(Debug, Clone)]
pub struct PrngHandle {
    source: Source,
    bits_consumed: u64,
    cached: Option<Decision>,
}

impl PrngHandle {
    pub fn new(kind: PrngKind, seed: u64) -> Self {
        let source = match kind {
            PrngKind::Quality => Source::Quality(Box::new(ChaCha12Rng::seed_from_u64(seed))),
            PrngKind::Lfsr => Source::Lfsr(Lfsr32::from_u64(seed)),
        };
        PrngHandle {
            source,
            bits_consumed: 0,
            cached: None,
        }
    }

    pub fn kind(&self) -> PrngKind {
        match self.source {
            Source::Quality(_) => PrngKind::Quality,
            Source::Lfsr(_) => PrngKind::Lfsr,
        }
    }

    pub fn bits_consumed(&self) -> u64 {
        self.bits_consumed
    }

    /// Probability with which `bernoulli(p)` returns true.
    pub fn effective_p(&self, p: f64) -> f64 {
        match self.source {
            Source::Quality(_) => p.clamp(0.0, 1.0),
            Source::Lfsr(_) => lfsr_effective_p(p),
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p >= 1.0 {
            return true;
        }
        if p <= 0.0 {
            return false;
        }
        let d = match self.cached {
            Some(d) if d.p == p => d,
            _ => *self.cached.insert(Decision::new(p)),
        };
        self.bits_consumed += u64::from(d.bits);
        match &mut self.source {
            Source::Quality(rng) => rng.sample(d.dist),
            Source::Lfsr(l) => l.next_bits(d.bits) < d.cutoff,
        }
    }
}
