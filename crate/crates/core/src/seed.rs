//! Order-independent seed derivation.
//!
//! Every stochastic step draws from an RNG keyed by the master seed plus a
//! stable description of the item (triple index, query label, ...), so results
//! do not depend on thread scheduling or processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

pub fn rng_for(master: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, parts))
}

/// Hex SHA-256 of a string.
pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Uniform value in `[0, 1)` fixed by the seed and parts.
pub fn unit_interval(master: u64, parts: &[&str]) -> f64 {
    (derive_seed(master, parts) >> 11) as f64 / (1u64 << 53) as f64
}
