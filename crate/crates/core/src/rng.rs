//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`SeedStream`], a ChaCha8
//! generator (`rand_chacha::ChaCha8Rng`) keyed by `seed_from_u64(seed)` with
//! its 64-bit stream id set to a purpose-specific constant. The stream id
//! keeps weight initialization, input generation and Monte Carlo sampling
//! independent while sharing one user-facing seed.
//!
//! The derived values are fixed so another implementation can replay a run:
//!
//! * `uniform()` = `(next_u64() >> 11) * 2^-53`, a value in `[0, 1)`.
//! * `uniform_range(lo, hi)` = `lo + (hi - lo) * uniform()`.
//! * `index(n)` = `floor(uniform() * n)` clamped to `n - 1`.
//! * `gaussian()` uses Box-Muller on two uniforms `u1, u2`:
//!   `rho = sqrt(-2 ln(1 - u1))`, yielding `rho cos(2 pi u2)` first and
//!   `rho sin(2 pi u2)` on the following call.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream ids for the different consumers of a run seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const INPUT: u64 = 2;
    pub const MONTE_CARLO: u64 = 3;
    pub const PROPERTY: u64 = 4;
    pub const DATASET: u64 = 5;
}

#[derive(Debug, Clone)]
pub struct SeedStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl SeedStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        SeedStream { rng, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let rho = (-2.0 * (1.0 - u1).ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(rho * angle.sin());
        rho * angle.cos()
    }
}
