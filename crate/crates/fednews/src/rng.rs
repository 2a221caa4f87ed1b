//! Deterministic seed derivation.
//!
//! Every source of randomness in a run is a ChaCha stream seeded from the
//! master seed plus a purpose tag, so unrelated subsystems never share a
//! stream and adding draws in one place cannot shift another.

use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use rand::SeedableRng;

/// Derives independent, reproducible RNG streams from one master seed.
#[derive(Debug, Clone, Copy)]
pub struct Seeder {
    master: u64,
}

impl Seeder {
    pub fn new(master: u64) -> Self {
        Seeder { master }
    }

    /// A 32-byte seed bound to `(master, tag)`.
    pub fn seed_bytes(&self, tag: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.master.to_le_bytes());
        h.update(tag.as_bytes());
        h.finalize().into()
    }

    /// A fresh ChaCha stream for `tag`.
    pub fn rng(&self, tag: &str) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.seed_bytes(tag))
    }

    /// A fresh ChaCha stream for `(tag, index)`, e.g. per round or per client.
    pub fn rng_at(&self, tag: &str, index: u64) -> ChaCha20Rng {
        let mut h = Sha256::new();
        h.update(self.master.to_le_bytes());
        h.update(tag.as_bytes());
        h.update(index.to_le_bytes());
        ChaCha20Rng::from_seed(h.finalize().into())
    }

    pub fn master(&self) -> u64 {
        self.master
    }
}
