//! Seed derivation. Every random stream in the pipeline is a ChaCha8 generator
//! keyed by a `u64` derived from the global seed and a named substream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of `(seed, index)`; used for per-episode and per-attempt streams.
pub fn derive(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Hash of `(seed, name)` for named substreams such as `"world"` or `"train"`.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut h = mix64(seed);
    for b in name.bytes() {
        h = mix64(h ^ u64::from(b));
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
