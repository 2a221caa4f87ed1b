//! Mask expansion: a 16-byte seed stretched to a stream of u64 residues.
//!
//! The default generator is MT19937-64 seeded with the two little-endian
//! words of the seed. Mersenne Twister is not cryptographically secure; a
//! ChaCha20 stream is available as a drop-in alternative and both are
//! exercised by the protocol tests.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_mt::Mt64;

/// Which generator expands mask seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrgKind {
    #[default]
    MersenneTwister,
    ChaCha20,
}

impl PrgKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mt" | "mersenne" | "mersenne-twister" => Some(PrgKind::MersenneTwister),
            "chacha" | "chacha20" => Some(PrgKind::ChaCha20),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PrgKind::MersenneTwister => "mersenne-twister",
            PrgKind::ChaCha20 => "chacha20",
        }
    }
}

/// Expand a 16-byte seed into `len` u64 residues.
pub fn mask_stream(kind: PrgKind, seed: &[u8; 16], len: usize) -> Vec<u64> {
    match kind {
        PrgKind::MersenneTwister => {
            let lo = u64::from_le_bytes(seed[..8].try_into().unwrap());
            let hi = u64::from_le_bytes(seed[8..].try_into().unwrap());
            let mut mt = Mt64::new_with_key([lo, hi]);
            (0..len).map(|_| mt.next_u64()).collect()
        }
        PrgKind::ChaCha20 => {
            let mut key = [0u8; 32];
            key[..16].copy_from_slice(seed);
            key[16..].copy_from_slice(seed);
            let mut rng = ChaCha20Rng::from_seed(key);
            (0..len).map(|_| rng.random()).collect()
        }
    }
}
