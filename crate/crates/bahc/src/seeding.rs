//! Deterministic seed derivation.
//!
//! Every randomized component of the crate draws from a `ChaCha8` stream
//! keyed by a sub-seed derived here. Sub-seeds mix a master seed with the
//! consumer's coordinates (bootstrap index, simulation id, retry counter)
//! through SplitMix64, so independent units of work are order-independent
//! and reproducible across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a sub-seed from a master seed and a sequence of coordinates.
pub fn sub_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut state = mix64(seed);
    for &p in parts {
        state = mix64(state ^ p);
    }
    state
}

/// A `ChaCha8` generator keyed by `sub_seed(seed, parts)`.
pub fn rng_for(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, parts))
}

/// Stream tags keeping unrelated consumers of the same master seed apart.
pub mod stream {
    pub const BOOTSTRAP: u64 = 1;
    pub const WINDOW: u64 = 2;
    pub const SYNTH: u64 = 3;
    pub const CV_FOLDS: u64 = 4;
}
