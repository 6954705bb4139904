//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` whose seed is derived
//! from a global seed plus a list of string/integer salts, so results do not
//! depend on scheduling or on the order streams are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// One component of a derived seed.
#[derive(Debug, Clone, Copy)]
pub enum Salt<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Salt<'a> {
    fn from(s: &'a str) -> Self {
        Salt::Str(s)
    }
}

impl From<u64> for Salt<'_> {
    fn from(v: u64) -> Self {
        Salt::Int(v)
    }
}

/// `hash(global_seed, salts...)` truncated to 64 bits.
pub fn derive_seed(seed: u64, salts: &[Salt<'_>]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for salt in salts {
        match salt {
            Salt::Str(s) => {
                h.update([0u8]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
            Salt::Int(v) => {
                h.update([1u8]);
                h.update(v.to_le_bytes());
            }
        }
    }
    let digest = h.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

pub fn rng_for(seed: u64, salts: &[Salt<'_>]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, salts))
}

/// Hex-encoded SHA-256 of a byte slice, used for artifact hashes in run manifests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
