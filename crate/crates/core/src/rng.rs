//! Seeded randomness.
//!
//! Every stochastic path in the crate draws from [`SeededRng`], a ChaCha8
//! stream keyed by a 64-bit seed (`ChaCha8Rng::seed_from_u64`). ChaCha output
//! is platform independent, so a seed names the same scene and the same
//! weights everywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent child stream; `tag` distinguishes siblings.
    pub fn fork(&mut self, tag: u64) -> Self {
        let base: u64 = self.0.random();
        Self::new(base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.random::<f64>()
    }

    /// Uniform in `[-k, k]`, rounded to `f32` so parameters survive the
    /// float32 weights container unchanged.
    pub fn symmetric_f32(&mut self, k: f64) -> f64 {
        let v = self.uniform(-k, k) as f32;
        f64::from(v)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.0.random_range(0..n)
    }

    /// Stream for the parameter tensor `name` under `seed`. Keyed by name,
    /// so a tensor's initial values do not depend on which other layers
    /// exist in the model.
    pub fn for_param(seed: u64, name: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        Self::new(seed ^ h)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.0.random::<f64>() < p
    }
}
