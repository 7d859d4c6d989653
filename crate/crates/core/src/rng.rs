//! Named, seedable random streams.
//!
//! Every consumer of randomness (the server, each hospital, each round)
//! derives its own ChaCha stream from the experiment seed and a label, so
//! results depend only on *who* draws, never on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

/// Derives an independent stream for `label` under `seed`.
pub fn stream(seed: u64, label: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(b"fedchain-rng-v1");
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha20Rng::from_seed(key)
}

/// Convenience for a plain seeded stream with no label.
pub fn seeded(seed: u64) -> StreamRng {
    stream(seed, "")
}
