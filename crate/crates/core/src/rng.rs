//! Deterministic random streams.
//!
//! Every stochastic routine takes an explicit seed. Independent streams for
//! ensembles are derived from a base seed and a list of stream indices with
//! a SplitMix64 finalizer, so `(base, [experiment, replicate])` always maps
//! to the same generator.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and stream indices.
pub fn derive_seed(base: u64, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(splitmix64(base), |acc, &i| splitmix64(acc ^ splitmix64(i)))
}

pub fn rng_from_seed(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

pub fn stream(base: u64, indices: &[u64]) -> StreamRng {
    rng_from_seed(derive_seed(base, indices))
}
