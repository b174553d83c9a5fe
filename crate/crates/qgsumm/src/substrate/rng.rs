//! Deterministic RNG stream derivation.
//!
//! Every random draw in the pipeline comes from a ChaCha stream derived from
//! (master seed, purpose label, indices). Streams are independent of thread
//! scheduling and of the order in which other streams are consumed, which is
//! what makes `--workers` irrelevant to the produced bytes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64-bit. Stable across platforms and releases (unlike `DefaultHasher`).
pub struct Fnv64(u64);

impl Fnv64 {
    pub fn new() -> Self {
        Fnv64(0xcbf29ce484222325)
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write_bytes(&v.to_le_bytes());
    }

    pub fn write_str(&mut self, s: &str) {
        self.write_bytes(s.as_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

/// Hash of a label plus integer indices; used for stream and fold derivation.
pub fn stable_hash(label: &str, indices: &[u64]) -> u64 {
    let mut h = Fnv64::new();
    h.write_str(label);
    for &i in indices {
        h.write_u64(i);
    }
    h.finish()
}

/// Derive an independent ChaCha stream from (seed, label, indices).
pub fn stream(seed: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut h = Fnv64::new();
    h.write_u64(seed);
    h.write_str(label);
    for &i in indices {
        h.write_u64(i);
    }
    ChaCha8Rng::seed_from_u64(h.finish())
}
