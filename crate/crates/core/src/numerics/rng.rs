use super::select::ScoreVector;
use crate::error::{invalid_param, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64: a counter-based generator. The state advances by a fixed odd
/// constant and each output is a bijective mix of the counter, so streams are
/// bit-identical on every platform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    state: u64,
}

impl Rng {
    pub const ALGORITHM: &'static str = "splitmix64";

    pub fn new(seed: u64) -> Self {
        Self { seed, state: seed }
    }

    /// Seed this generator was created with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = self.next_f64();
        let v = lo + (hi - lo) * u;
        if v >= hi && hi > lo {
            hi.next_down()
        } else {
            v
        }
    }

    /// Uniform integer in `0..n` (rejection sampling, unbiased). `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Approximately standard normal draw (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Independent child generator seeded from this stream.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

/// `len` i.i.d. draws from `[lo, hi)` stored as `f32`; all `lo` when `lo == hi`.
pub fn uniform_vector(rng: &mut Rng, len: usize, lo: f32, hi: f32) -> Result<ScoreVector> {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(invalid_param(format!(
            "invalid uniform bounds [{lo}, {hi})"
        )));
    }
    let values = (0..len)
        .map(|_| {
            let v = rng.uniform(lo as f64, hi as f64) as f32;
            // the f32 rounding can land on `hi`
            if v >= hi && hi > lo {
                hi.next_down()
            } else {
                v
            }
        })
        .collect();
    Ok(ScoreVector::new(values))
}
