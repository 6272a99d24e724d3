//! Seed derivation. Every stochastic component owns a ChaCha stream derived
//! from the run seed and a fixed stream label.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream labels keep component RNGs independent of each other.
pub mod stream {
    pub const ENV: u64 = 1;
    pub const ACTIONS: u64 = 2;
    pub const FISHER: u64 = 3;
    pub const EXPERT: u64 = 4;
    pub const INIT: u64 = 5;
    pub const EVAL: u64 = 6;
}

/// SplitMix64 finalizer, used to spread (seed, stream, index) triples.
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    mix(mix(mix(seed) ^ stream) ^ index)
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream, index))
}
