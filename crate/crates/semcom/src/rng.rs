//! Deterministic RNG derivation.
//!
//! Every stochastic component (init, shuffling, channel noise, evaluation
//! draws) pulls its own ChaCha8 stream derived from the experiment seed plus
//! a tag path, so runs are bit-reproducible and independent of batch size or
//! evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a tag path into a single sub-seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut acc = mix(seed);
    for &t in tags {
        acc = mix(acc ^ mix(t));
    }
    acc
}

/// ChaCha8 stream for `(seed, tags...)`.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stable tags for the independent noise sources.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const CHANNEL: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const REINIT: u64 = 6;
    pub const MIX: u64 = 7;
    pub const SYNTH: u64 = 8;
}
