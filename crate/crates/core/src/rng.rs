//! Seeded random streams.
//!
//! A run has one 64-bit master seed. Each stochastic component draws from its
//! own stream derived from `(master, label)`, so introducing a new component
//! never shifts the numbers another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used everywhere in the simulator. ChaCha output is stable across
/// platforms and crate versions, which keeps traces reproducible.
pub type SimRng = ChaCha8Rng;

pub const STREAM_WORKLOAD: &str = "workload";
pub const STREAM_SCHEDULER: &str = "scheduler";
pub const STREAM_GOSSIP: &str = "gossip";

fn fnv1a(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed of a labeled sub-stream.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    splitmix64(master ^ fnv1a(label))
}

/// RNG for the labeled sub-stream of `master`.
pub fn stream(master: u64, label: &str) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, label))
}
