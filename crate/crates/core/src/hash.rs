//! Deterministic hashing for site tables.
//!
//! The standard library's default hasher is randomized per process, which
//! would make iteration order (and therefore any floating point accumulation
//! over map entries) vary from run to run. Site tables instead use FNV-1a
//! with a 64-bit avalanche finalizer: seed-free, stable across platforms,
//! and fast on the short keys produced by canonical encodings.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Final mixing step (the `splitmix64` finalizer). FNV-1a alone has weak
/// low-bit diffusion for keys that differ only in their last bytes; the
/// finalizer spreads every input bit across the output.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

/// FNV-1a over a byte slice, without the finalizer.
#[inline]
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut state = FNV_OFFSET;
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

/// Streaming hasher: FNV-1a accumulation, `mix64` on output.
#[derive(Clone)]
pub struct DetHasher {
    state: u64,
}

impl Default for DetHasher {
    fn default() -> Self {
        DetHasher { state: FNV_OFFSET }
    }
}

impl Hasher for DetHasher {
    #[inline]
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= u64::from(b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    #[inline]
    fn finish(&self) -> u64 {
        mix64(self.state)
    }
}

/// Hash map with deterministic, seed-free iteration behavior.
pub type DetMap<K, V> = HashMap<K, V, BuildHasherDefault<DetHasher>>;
