//! Seed derivation for independent random streams.
//!
//! Every stochastic decision in a run draws from a stream keyed by the run
//! seed plus a short tag path (purpose, node, peer, counter). Streams never
//! share state, so adding or removing unrelated participants cannot shift
//! anyone else's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Stream tags. Kept distinct so streams for different purposes never collide.
pub mod tag {
    pub const OPINIONS: u64 = 0x6f70_696e;
    pub const FAULTY: u64 = 0x6661_756c;
    pub const RULE: u64 = 0x7275_6c65;
    pub const LATENCY: u64 = 0x6c61_7465;
    pub const ADVERSARY: u64 = 0x6164_7672;
    pub const GRAPH: u64 = 0x6772_6170;
    pub const SYNC: u64 = 0x7379_6e63;
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(seed), |acc, &t| mix64(acc ^ mix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, tags))
}
