//! Seeded random streams.
//!
//! All randomness in the crate comes from ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)` and switched to stream `stream` with `set_stream`.
//! Uniforms take the top 53 bits of `next_u64`; normals use the Box-Muller
//! cosine branch, consuming exactly two `u64` draws per sample. Any
//! implementation following these rules reproduces the same values.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::math;

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Stream { rng }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal sample.
    pub fn normal(&mut self) -> f64 {
        // u1 in (0, 1] keeps the log finite.
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG_53;
        let u2 = self.uniform();
        math::sqrt(-2.0 * math::ln(u1)) * math::cos(core::f64::consts::TAU * u2)
    }

    /// Uniform index in `0..n` (n > 0).
    pub fn below(&mut self, n: usize) -> usize {
        (self.uniform() * n as f64) as usize % n
    }
}
