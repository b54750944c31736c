//! Deterministic RNG plumbing.
//!
//! Every stochastic component owns a `ChaCha8Rng` seeded from a base seed plus
//! a stream label, so independent components never share or race a generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a sub-seed from a base seed and a stream label.
///
/// FNV-1a over the label mixed through splitmix64: cheap, stable across
/// platforms, and good enough to decorrelate streams.
pub fn stream_seed(base: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    splitmix64(base ^ h)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic generator for a (seed, label) stream.
pub fn rng_for(base: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(base, label))
}
