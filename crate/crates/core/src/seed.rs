//! Root-seed derivation. Every component draws from its own stream, keyed by
//! the SHA-256 of `root_seed || component name`, so rerunning one stage does
//! not perturb the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SeededRng = ChaCha8Rng;

pub fn derive_seed(root: u64, component: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(component.as_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

pub fn derive_indexed(root: u64, component: &str, index: usize) -> u64 {
    derive_seed(root, &format!("{component}/{index}"))
}

pub fn rng_for(root: u64, component: &str) -> SeededRng {
    SeededRng::seed_from_u64(derive_seed(root, component))
}

pub fn rng_indexed(root: u64, component: &str, index: usize) -> SeededRng {
    SeededRng::seed_from_u64(derive_indexed(root, component, index))
}
