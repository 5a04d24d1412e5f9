//! Seed derivation for reproducible, independent random streams.
//!
//! Every stream is a `ChaCha8Rng` seeded from `derive_seed(root, path)`: the
//! root seed is XOR-ed with a SplitMix64 hash of each path component in turn,
//! each step followed by a SplitMix64 finalization. Replication `r` of an
//! experiment uses the path `[tag, r]`, so any single replication can be
//! re-run on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream_rng(root: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}

/// Stream tags used by the experiment harness.
pub mod tags {
    pub const INITIAL: u64 = 1;
    pub const DYNAMICS: u64 = 2;
}
