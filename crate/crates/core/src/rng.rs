//! Seed derivation. Every random stream in a run is keyed by the run seed
//! plus a tag naming its consumer.

use sha2::{Digest, Sha256};

/// Independent 64-bit seed for the stream `tag` under `seed`.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
