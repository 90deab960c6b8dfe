//! Deterministic seed derivation. Every random stream in the crate is keyed by
//! a base seed plus a label path, so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn rng(base: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, parts))
}

/// Uniform draw in `[0, 1)` that is a pure function of its key.
pub fn unit(base: u64, parts: &[&str]) -> f64 {
    (derive(base, parts) >> 11) as f64 / (1u64 << 53) as f64
}
