//! Platform-independent 64-bit hashing and keyed random streams.
//!
//! [`StableHasher`] is FNV-1a over the written bytes followed by the
//! SplitMix64 finalizer. Each field is terminated by a `0x1F` unit separator
//! so that `("ab", "c")` and `("a", "bc")` hash differently. Integers are
//! written little-endian.
//!
//! [`keyed_stream`] turns a hashed key into a ChaCha20 generator. ChaCha is
//! counter-based, so a stream depends only on its key and never on the order
//! in which other streams were consumed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const FIELD_SEPARATOR: u8 = 0x1f;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct StableHasher {
    state: u64,
}

impl Default for StableHasher {
    fn default() -> Self {
        Self::new()
    }
}

impl StableHasher {
    pub fn new() -> Self {
        StableHasher { state: FNV_OFFSET }
    }

    fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= u64::from(b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.write_bytes(s.as_bytes());
        self.write_bytes(&[FIELD_SEPARATOR]);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.write_bytes(&v.to_le_bytes());
        self.write_bytes(&[FIELD_SEPARATOR]);
        self
    }

    pub fn finish(&self) -> u64 {
        splitmix64(self.state)
    }
}

/// Builds a ChaCha20 stream whose 256-bit seed is expanded from `key` with
/// four successive SplitMix64 steps.
pub fn keyed_stream(key: u64) -> ChaCha20Rng {
    let mut seed = [0u8; 32];
    let mut z = key;
    for chunk in seed.chunks_exact_mut(8) {
        z = splitmix64(z);
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    ChaCha20Rng::from_seed(seed)
}
