//! Splittable seed derivation.
//!
//! Every stochastic unit of work (a trial, a fold, a window) receives its own
//! seed derived from the master seed and a path of integer labels, so the
//! result of a unit never depends on the order in which units are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a label path.
///
/// `derive_seed(s, &[a, b])` equals `derive_seed(derive_seed(s, &[a]), &[b])`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(master, |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

/// The generator used throughout the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
