//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a 64-bit
//! value obtained by folding a root seed with a path of integer labels
//! (replication, particle, purpose) through the SplitMix64 finaliser. Streams
//! with different label paths are statistically independent, and a stream is
//! identified by its labels alone, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes used as the last label of a derivation path.
pub mod purpose {
    pub const INITIAL: u64 = 1;
    pub const JUMPS: u64 = 2;
    pub const GAUSS: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
    pub const REFERENCE: u64 = 5;
    pub const AUX: u64 = 6;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold `labels` into `root`.
pub fn derive_seed(root: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(root), |acc, &l| splitmix64(acc ^ splitmix64(l.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn stream(root: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, labels))
}
