//! Seed handling shared by every randomized component.
//!
//! All randomness flows from `u64` seeds into [`SimRng`] (ChaCha8), which is
//! portable and stable across platforms. Per-trial seeds come from
//! [`derive_seed`], so a trial's random numbers depend only on the base seed,
//! a stream tag and the trial index, never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags keep the independent random streams of one trial apart.
pub mod tag {
    pub const STREAM: u64 = 1;
    pub const REFERENCE_POOL: u64 = 2;
    pub const REFERENCE_DRAWS: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const RESET_POOL: u64 = 5;
    pub const WALK: u64 = 6;
    pub const BLOCKS: u64 = 7;
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed, a stream tag and an index into a child seed:
/// `splitmix64(splitmix64(base ^ splitmix64(tag)) ^ index)`.
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(tag)) ^ index)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
