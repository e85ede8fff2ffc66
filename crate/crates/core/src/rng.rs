//! Named random substreams.
//!
//! Every random draw in the crate flows from a single experiment seed. A
//! substream is identified by a name and a small index path, so that e.g.
//! the sampler for episode 3 of batch 7 can be reproduced without replaying
//! anything else.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn substream(seed: u64, name: &str, index: &[u64]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    for i in index {
        hasher.update(i.to_le_bytes());
    }
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Derive a child seed, for APIs that take a plain integer seed.
pub fn derive_seed(seed: u64, name: &str, index: &[u64]) -> u64 {
    use rand::RngCore;
    substream(seed, name, index).next_u64()
}
