//! Fixtures shared by the benchmarks.

use byseer_core::{Arch, Model, Registry};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic pseudo-random bytes.
pub fn random_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut data = vec![0u8; len];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut data);
    data
}

/// Randomly initialized full-size model over the builtin registry.
pub fn full_model() -> Model<f32> {
    Model::init(Arch::STANDARD, Registry::builtin().labels(), 1).expect("standard arch is valid")
}
