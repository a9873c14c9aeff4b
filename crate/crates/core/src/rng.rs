//! Seeded random streams.
//!
//! Every random draw in the toolkit flows from one user-facing `u64`
//! seed split into named substreams ("sim", "folds", "init", "dropout",
//! "search", ...). Substream derivation is a fixed FNV-1a fold so a
//! manifest can record the exact derived seed for each stage.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive the substream seed for `label` from a root seed.
pub fn substream_seed(seed: u64, label: &str) -> u64 {
    let mut bytes = Vec::with_capacity(label.len() + 8);
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(label.as_bytes());
    fnv1a(&bytes)
}

/// A deterministic generator for the named substream of `seed`.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, label))
}

/// A deterministic generator seeded directly.
pub fn from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
