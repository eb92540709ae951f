//! Seeded random streams. Every source of randomness is a ChaCha stream
//! derived from a single seed and a stream id.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

pub type Stream = ChaCha8Rng;

/// Stream ids used by the simulator.
pub mod ids {
    pub const WORLD: u64 = 0;
    pub const POLICY_INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const EVAL_USERS: u64 = 3;
    pub const ADAPTIVE_LR: u64 = 4;
    pub const LSR_MARGINAL_MC: u64 = 5;
}

pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Standard Gumbel as `-ln E` with `E ~ Exp(1)`.
#[inline]
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    -e.ln()
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[inline]
pub fn uniform_pm1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-1.0..=1.0)
}
