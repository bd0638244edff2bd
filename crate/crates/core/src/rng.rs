//! SplitMix64 random stream.
//!
//! The generator keeps one 64-bit word of state. Each draw adds the golden
//! gamma `0x9E3779B97F4A7C15` to the state and returns the state passed
//! through the standard SplitMix64 finalizer:
//!
//! ```text
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z ^ (z >> 31)
//! ```
//!
//! Derived quantities:
//! * `uniform()` is `(next_u64() >> 11) * 2^-53`, in `[0, 1)`.
//! * `below(n)` is `(next_u64() * n) >> 64` computed in 128 bits.
//! * `normal()` is one Box-Muller draw `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.
//! * `derive(seed, tags)` starts from `seed` and, for every tag, reseeds with
//!   `next_u64() ^ (tag * 0x9E3779B97F4A7C15)`. Substreams are therefore a
//!   pure function of `(seed, tags)`.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent substream keyed by `tags`.
    pub fn derive(seed: u64, tags: &[u64]) -> Self {
        let mut rng = Rng::new(seed);
        for &tag in tags {
            let next = rng.next_u64() ^ tag.wrapping_mul(GAMMA);
            rng = Rng::new(next);
        }
        rng
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
