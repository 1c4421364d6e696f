//! Counter-based random streams.
//!
//! A stream is a key derived from `(seed, path...)` plus a counter; the n-th
//! draw is a pure function of the key and n. Event logs, walk realizations and
//! replicate runs each get their own key, so any of them can be regenerated in
//! isolation and in any order.

use rand_core::{impls, RngCore};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream kinds used when keying per-site and per-realization streams.
pub mod kind {
    pub const VOTER: u64 = 1;
    pub const REACTION: u64 = 2;
    pub const DIRECT: u64 = 3;
    pub const INITIAL: u64 = 4;
    pub const WALK: u64 = 5;
    pub const BBM: u64 = 6;
    pub const TRIAL: u64 = 7;
    pub const REPLICATE: u64 = 8;
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a seed and a path of identifiers into a stream key.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    let mut h = mix64(seed ^ 0x6A09_E667_F3BC_C909);
    for &p in path {
        h = mix64(h.wrapping_add(GOLDEN) ^ mix64(p.wrapping_add(0x3C6E_F372_FE94_F82B)));
    }
    h
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stream {
    key: u64,
    ctr: u64,
}

impl Stream {
    pub fn new(seed: u64, path: &[u64]) -> Self {
        Stream { key: derive_key(seed, path), ctr: 0 }
    }

    pub fn from_key(key: u64) -> Self {
        Stream { key, ctr: 0 }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Number of 64-bit words drawn so far.
    pub fn position(&self) -> u64 {
        self.ctr
    }

    /// Jump to an absolute draw index.
    pub fn seek(&mut self, pos: u64) {
        self.ctr = pos;
    }

    #[inline]
    pub fn word_at(key: u64, pos: u64) -> u64 {
        mix64(key ^ mix64(pos.wrapping_mul(GOLDEN).wrapping_add(GOLDEN)))
    }

    #[inline]
    pub fn next_word(&mut self) -> u64 {
        let w = Self::word_at(self.key, self.ctr);
        self.ctr = self.ctr.wrapping_add(1);
        w
    }

    /// Uniform on [0, 1) with 53 bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_word() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on (0, 1].
    #[inline]
    pub fn uniform_open0(&mut self) -> f64 {
        ((self.next_word() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Index in 0..n from exactly one word (multiply-high; bias below 2^-64 * n).
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_word() as u128 * n as u128) >> 64) as usize
    }

    /// Exponential with the given rate by inversion (exactly one word).
    #[inline]
    pub fn exp(&mut self, rate: f64) -> f64 {
        -libm::log(self.uniform_open0()) / rate
    }

    /// Bernoulli(p) from one word.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        (self.next_word() >> 32) as u32
    }
    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        impls::fill_bytes_via_next(self, dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand_core::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = Stream::new(7, &[1, 2]);
        let mut b = Stream::new(7, &[1, 2]);
        for _ in 0..100 {
            assert_eq!(a.next_word(), b.next_word());
        }
    }

    #[test]
    fn seek_is_random_access() {
        let mut a = Stream::new(3, &[9]);
        let words: alloc::vec::Vec<u64> = (0..20).map(|_| a.next_word()).collect();
        let mut b = Stream::new(3, &[9]);
        b.seek(13);
        assert_eq!(b.next_word(), words[13]);
    }

    #[test]
    fn paths_give_different_streams() {
        let a = Stream::new(1, &[0, 1]).next_word();
        let b = Stream::new(1, &[1, 0]).next_word();
        let c = Stream::new(2, &[0, 1]).next_word();
        assert!(a != b && a != c && b != c);
    }

    #[test]
    fn uniform_mean_and_range() {
        let mut s = Stream::new(11, &[]);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        let mean = sum / n as f64;
        // sd of the mean = sqrt(1/12/n)
        assert!((mean - 0.5).abs() < 4.0 * libm::sqrt(1.0 / 12.0 / n as f64));
    }

    #[test]
    fn exp_mean() {
        let mut s = Stream::new(5, &[kind::VOTER]);
        let n = 200_000;
        let rate = 3.0;
        let sum: f64 = (0..n).map(|_| s.exp(rate)).sum();
        let mean = sum / n as f64;
        assert!((mean - 1.0 / rate).abs() < 4.0 * (1.0 / rate) / libm::sqrt(n as f64));
    }
}
