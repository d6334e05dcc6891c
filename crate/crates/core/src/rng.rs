//! Seed derivation. Every random stream in the crate is a `ChaCha8Rng`
//! seeded from the experiment seed and a stream tag, so results do not
//! depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer over `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Stream tags for the named random consumers.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const MAIN_ORDER: u64 = 2;
    pub const AUX_ORDER: u64 = 3;
    pub const DISCRIMINATOR: u64 = 4;
    pub const SUBSET_MAIN: u64 = 5;
    pub const SUBSET_AUX: u64 = 6;
    pub const SUBSET_TEST: u64 = 7;
    pub const KMEANS: u64 = 8;
    pub const TSNE: u64 = 9;
    pub const ACTMAX: u64 = 10;
    pub const VIEW: u64 = 11;
}
