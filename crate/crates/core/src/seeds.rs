//! Named random streams.
//!
//! Every random draw in a study comes from a stream keyed by
//! `(seed, label, replication, repeat)`. The key is hashed with SHA-256 and
//! the digest seeds a ChaCha8 generator, so adding a sampler or a stream
//! never shifts the draws of another.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

/// Derives the 32-byte generator seed for one stream.
pub fn stream_seed(seed: u64, label: &str, replication: u64, repeat: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(replication.to_le_bytes());
    h.update(repeat.to_le_bytes());
    h.finalize().into()
}

pub fn stream(seed: u64, label: &str, replication: u64, repeat: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_seed(seed, label, replication, repeat))
}

/// A 64-bit seed for a sampler call, derived from the same key.
pub fn derived_u64(seed: u64, label: &str, replication: u64, repeat: u64) -> u64 {
    let s = stream_seed(seed, label, replication, repeat);
    u64::from_le_bytes(s[..8].try_into().unwrap())
}
