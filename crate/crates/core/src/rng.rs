//! Deterministic per-element random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream addressed by
//! `(seed, domain, index)`, so results do not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct domains never share a stream for the same seed.
pub mod domain {
    pub const SAMPLER_NOISE: u64 = 1;
    pub const LOSS_TIME: u64 = 2;
    pub const LOSS_NOISE: u64 = 3;
    pub const DATASET: u64 = 4;
    pub const INIT: u64 = 5;
    pub const MINIBATCH: u64 = 6;
    pub const CLASSES: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const STEP: u64 = 9;
}

pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mixed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17) ^ domain.wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(index);
    rng
}

/// A child seed, e.g. one per training step.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    stream(seed, domain, index).next_u64()
}
