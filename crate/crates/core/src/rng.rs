//! Seed handling.
//!
//! Every stochastic routine takes a `u64` seed. Independent streams are split
//! off with ChaCha's 64-bit stream counter, so parallel sections draw from
//! disjoint, reproducible sequences regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for stream `stream` of the master `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed, for APIs that take a plain seed rather than a generator.
pub fn child_seed(seed: u64, stream: u64) -> u64 {
    use rand::RngCore;
    substream(seed, stream).next_u64()
}
