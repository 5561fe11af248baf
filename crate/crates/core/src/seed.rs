//! Deterministic seed derivation.
//!
//! Every random draw in a run comes from a stream keyed by the run seed plus a
//! small label path (purpose, step index, call key). The mixing is a fixed
//! FNV-1a / SplitMix64 combination so streams are stable across platforms and
//! toolchain releases, which the std hasher does not guarantee.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Builder for a derived seed: `SeedPath::new(seed).label("latency").index(t).bytes(key)`.
#[derive(Clone, Copy, Debug)]
pub struct SeedPath {
    state: u64,
}

impl SeedPath {
    pub fn new(seed: u64) -> Self {
        Self { state: mix64(seed ^ FNV_OFFSET) }
    }

    pub fn label(self, label: &str) -> Self {
        self.bytes(label.as_bytes())
    }

    pub fn index(self, i: u64) -> Self {
        Self { state: mix64(self.state ^ mix64(i.wrapping_add(0x5851_f42d_4c95_7f2d))) }
    }

    pub fn bytes(self, bytes: &[u8]) -> Self {
        // Length-prefix so ("ab","c") and ("a","bc") differ.
        let h = fnv1a(fnv1a(FNV_OFFSET, &(bytes.len() as u64).to_le_bytes()), bytes);
        Self { state: mix64(self.state ^ h) }
    }

    pub fn finish(self) -> u64 {
        self.state
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_are_stable_and_distinct() {
        let a = SeedPath::new(7).label("latency").index(3).finish();
        let b = SeedPath::new(7).label("latency").index(3).finish();
        let c = SeedPath::new(7).label("latency").index(4).finish();
        let d = SeedPath::new(8).label("latency").index(3).finish();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn byte_boundaries_matter() {
        let a = SeedPath::new(1).bytes(b"ab").bytes(b"c").finish();
        let b = SeedPath::new(1).bytes(b"a").bytes(b"bc").finish();
        assert_ne!(a, b);
    }
}
