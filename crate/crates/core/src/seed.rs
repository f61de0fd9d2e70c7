//! Seed derivation.
//!
//! Every random stream in the lab is a ChaCha8 generator keyed by a
//! 64-bit seed derived from the run's root seed and a task label. The
//! derivation is a SHA-256 of `root || label || index`, so sub-streams do
//! not depend on execution order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type LabRng = ChaCha8Rng;

pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(root: u64, label: &str, index: u64) -> LabRng {
    rng_from_seed(derive_seed(root, label, index))
}

/// Standard Gaussian vector of length `dim` from `seed`.
pub fn gaussian_vector(dim: usize, seed: u64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng_from_seed(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}
