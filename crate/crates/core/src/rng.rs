//! Seed derivation and small sampling helpers.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a root
//! seed mixed with a stream identifier, so independent pieces of work can
//! run in any order and still reproduce bit-identical results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `id` under `root`: the root XOR a hash of the id.
pub fn derive_seed(root: u64, id: u64) -> u64 {
    root ^ mix64(id)
}

/// Seed for a two-level stream (for example replication `rep` of cell `cell`).
pub fn derive_seed2(root: u64, a: u64, b: u64) -> u64 {
    derive_seed(derive_seed(root, a), b.wrapping_add(0x5bd1_e995))
}

pub fn stream(root: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, id))
}

/// Draws an index from an unnormalised-but-summing-to-one weight slice.
///
/// Falls back to the last index with positive weight when rounding leaves
/// the cumulative sum just below the uniform draw.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}
