//! Seed derivation.
//!
//! Every random stream in the toolkit is a ChaCha8 generator seeded from a
//! 64-bit value. Child seeds are derived from a parent seed and a numeric
//! index with one SplitMix64 finalization round:
//!
//! ```text
//! child(parent, index) = mix(parent + (index + 1) * 0x9E3779B97F4A7C15)
//! mix(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!         z ^= z >> 27; z *= 0x94D049BB133111EB;
//!         z ^= z >> 31
//! ```
//!
//! all arithmetic wrapping modulo 2^64. Trial `i` of an experiment uses
//! `child(master, i)`, so trials can run in any order or concurrently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn child(parent: u64, index: u64) -> u64 {
    splitmix64(parent.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags so that sibling streams derived from one seed never collide.
pub(crate) mod tag {
    pub const SPLIT: u64 = 1;
    pub const TRAIN_NEG: u64 = 2;
    pub const TEST_NEG: u64 = 3;
    pub const LR: u64 = 4;
    pub const TUNE: u64 = 5;
    pub const CLASSES: u64 = 6;
    pub const CHANCE: u64 = 7;
}
