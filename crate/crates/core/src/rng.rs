//! Seed derivation for reproducible parallel simulation.
//!
//! Every independent unit of randomness (a bootstrap draw, a Monte-Carlo
//! trial) gets its own ChaCha stream keyed by a derived seed, so results do
//! not depend on scheduling order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of labels.
pub fn derive_seed(parent: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(mix64(parent), |acc, &l| mix64(acc ^ mix64(l)))
}

/// Independent stream number `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
