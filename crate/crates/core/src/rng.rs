//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream keyed by the user
//! seed plus a tuple of counters (study, point, purpose, ...), so results do
//! not depend on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes used as the last key component.
pub mod purpose {
    pub const DGP: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const RESTART: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const PARAMS: u64 = 6;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes a seed and a key tuple into a single 64-bit stream id.
pub fn stream_key(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, k| splitmix64(acc ^ splitmix64(*k)))
}

pub fn stream_rng(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, keys))
}
