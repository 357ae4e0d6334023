//! Seed derivation.
//!
//! Every random stream in the toolkit is derived from one master seed through
//! `derive_seed`, a splitmix64-style mixer. Streams are keyed by stable labels
//! (module tag, iteration, candidate/particle index, ...) so results do not
//! depend on thread scheduling.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Module tags used as the first label of a derivation chain.
pub mod label {
    pub const DATAGEN: u64 = 0x01;
    pub const CALIBRATION: u64 = 0x02;
    pub const FILTER: u64 = 0x03;
    pub const EXPERIMENTS: u64 = 0x04;
    pub const SCENARIO: u64 = 0x05;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a label.
pub fn derive_seed(parent: u64, label: u64) -> u64 {
    splitmix(parent ^ splitmix(label))
}

/// Derive a seed through a chain of labels.
pub fn derive_chain(parent: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(parent, |seed, &l| derive_seed(seed, l))
}

/// Seeded generator for a label chain.
pub fn stream(parent: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_chain(parent, labels))
}
