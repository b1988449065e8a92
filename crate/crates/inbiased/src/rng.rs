//! Seed-derived random streams.
//!
//! Every source of randomness in a run is drawn from a named substream of
//! the master seed, so adding or removing one consumer (e.g. the shape
//! network's augmentation) never perturbs the draws seen by another. This
//! is what makes the co-training loop with zero alignment weights
//! bit-identical to an independently trained baseline.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a deterministic RNG for `(seed, label)`.
///
/// Labels are free-form but conventionally path-like, e.g. `init/rgb`,
/// `aug/shape/epoch/3`, `attack/12/0`.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Deterministic permutation of `0..n` for a named stream.
pub fn permutation(seed: u64, label: &str, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, label));
    idx
}
