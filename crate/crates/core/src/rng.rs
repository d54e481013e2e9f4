//! Deterministic seed derivation.
//!
//! Every independent random stream (a sweep trial, a training run, a dataset)
//! gets its own ChaCha8 generator keyed by a hash of the master seed and the
//! coordinates of the work item. Nothing depends on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of coordinates into a single 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

/// Stable tags for the different consumers of randomness.
pub mod tag {
    pub const SWEEP: u64 = 1;
    pub const INIT: u64 = 2;
    pub const DATA: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const CHAIN: u64 = 5;
    pub const EVAL: u64 = 6;
}
