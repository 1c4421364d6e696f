//! Torus geometry and packed {0,1} configurations.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Torus {
    dim: usize,
    side: usize,
    sites: usize,
}

impl Torus {
    pub fn new(dim: usize, side: usize) -> Torus {
        assert!(dim >= 1 && side >= 1);
        let sites = side.checked_pow(dim as u32).expect("torus too large");
        Torus { dim, side, sites }
    }

    /// Torus that leaves room for interactions of the given range.
    pub fn checked(dim: usize, side: usize, range: usize) -> Result<Torus> {
        if side <= 2 * range {
            return Err(Error::TorusTooSmall { side, range });
        }
        Ok(Torus::new(dim, side))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn side(&self) -> usize {
        self.side
    }
    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Coordinates of a site; coordinate 0 varies fastest.
    pub fn coords(&self, mut site: usize, out: &mut [i64]) {
        for c in out.iter_mut().take(self.dim) {
            *c = (site % self.side) as i64;
            site /= self.side;
        }
    }

    pub fn site_of(&self, coords: &[i64]) -> usize {
        let m = self.side as i64;
        let mut s = 0usize;
        let mut stride = 1usize;
        for &c in coords.iter().take(self.dim) {
            s += c.rem_euclid(m) as usize * stride;
            stride *= self.side;
        }
        s
    }

    /// The site `site + off` with wraparound.
    #[inline]
    pub fn shift(&self, site: usize, off: &[i64]) -> usize {
        let m = self.side as i64;
        let mut rem = site;
        let mut out = 0usize;
        let mut stride = 1usize;
        for &o in off.iter().take(self.dim) {
            let c = (rem % self.side) as i64;
            rem /= self.side;
            out += (c + o).rem_euclid(m) as usize * stride;
            stride *= self.side;
        }
        out
    }

    /// Table of `site + offsets[j]` for every site, row-major by site.
    pub fn shift_table(&self, offsets: &[i64]) -> Vec<u32> {
        let k = offsets.len() / self.dim;
        let mut t = Vec::with_capacity(self.sites * k);
        for s in 0..self.sites {
            for j in 0..k {
                t.push(self.shift(s, &offsets[j * self.dim..(j + 1) * self.dim]) as u32);
            }
        }
        t
    }
}

/// {0,1}-valued state on a torus, one bit per site.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    torus: Torus,
    words: Vec<u64>,
}

impl Configuration {
    pub fn zeros(torus: &Torus) -> Configuration {
        Configuration { torus: torus.clone(), words: vec![0; torus.sites().div_ceil(64)] }
    }

    pub fn ones(torus: &Torus) -> Configuration {
        let mut c = Configuration::zeros(torus);
        for s in 0..torus.sites() {
            c.set(s, 1);
        }
        c
    }

    /// Product Bernoulli(v(site)) field; site s uses word s of the stream keyed by `key`.
    pub fn bernoulli_with(torus: &Torus, key: u64, v: impl Fn(usize) -> f64) -> Configuration {
        let mut c = Configuration::zeros(torus);
        for s in 0..torus.sites() {
            let u = (Stream::word_at(key, s as u64) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u < v(s) {
                c.set(s, 1);
            }
        }
        c
    }

    pub fn bernoulli(torus: &Torus, v: f64, seed: u64) -> Configuration {
        let key = Stream::new(seed, &[crate::rng::kind::INITIAL]).key();
        Configuration::bernoulli_with(torus, key, |_| v)
    }

    pub fn from_bits(torus: &Torus, bits: &[u8]) -> Configuration {
        let mut c = Configuration::zeros(torus);
        for (s, &b) in bits.iter().enumerate().take(torus.sites()) {
            c.set(s, b & 1);
        }
        c
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, s: usize) -> u8 {
        ((self.words[s >> 6] >> (s & 63)) & 1) as u8
    }

    #[inline]
    pub fn set(&mut self, s: usize, v: u8) {
        let m = 1u64 << (s & 63);
        if v & 1 == 1 {
            self.words[s >> 6] |= m;
        } else {
            self.words[s >> 6] &= !m;
        }
    }

    #[inline]
    pub fn flip(&mut self, s: usize) {
        self.words[s >> 6] ^= 1u64 << (s & 63);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn density(&self) -> f64 {
        self.count_ones() as f64 / self.torus.sites() as f64
    }

    /// Little-endian packed bytes, bit j of byte b is site 8b+j.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.torus.sites().div_ceil(8);
        self.words.iter().flat_map(|w| w.to_le_bytes()).take(n).collect()
    }

    pub fn from_bytes(torus: &Torus, bytes: &[u8]) -> Configuration {
        let mut c = Configuration::zeros(torus);
        for s in 0..torus.sites() {
            if let Some(b) = bytes.get(s / 8) {
                c.set(s, (b >> (s % 8)) & 1);
            }
        }
        c
    }

    /// Averages over disjoint blocks of side `a`, blocks in lexicographic order
    /// with coordinate 0 fastest.
    pub fn coarse_density(&self, a: usize) -> Result<Vec<f64>> {
        let m = self.torus.side();
        if a == 0 || m % a != 0 {
            return Err(Error::BlockMisaligned { block: a, side: m });
        }
        let d = self.torus.dim();
        let nb = m / a;
        let nblocks = nb.pow(d as u32);
        let mut sums = vec![0u64; nblocks];
        let mut x = vec![0i64; d];
        for s in 0..self.torus.sites() {
            if self.get(s) == 1 {
                self.torus.coords(s, &mut x);
                let mut b = 0usize;
                let mut stride = 1usize;
                for &c in &x {
                    b += (c as usize / a) * stride;
                    stride *= nb;
                }
                sums[b] += 1;
            }
        }
        let vol = a.pow(d as u32) as f64;
        Ok(sums.into_iter().map(|c| c as f64 / vol).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_wraps() {
        let t = Torus::new(2, 5);
        let s = t.site_of(&[4, 0]);
        assert_eq!(t.shift(s, &[1, -1]), t.site_of(&[0, 4]));
        let mut c = [0i64; 2];
        t.coords(t.site_of(&[3, 2]), &mut c);
        assert_eq!(c, [3, 2]);
    }

    #[test]
    fn torus_guard() {
        assert!(Torus::checked(3, 4, 2).is_err());
        assert!(Torus::checked(3, 5, 2).is_ok());
    }

    #[test]
    fn bytes_round_trip() {
        let t = Torus::new(1, 70);
        let c = Configuration::bernoulli(&t, 0.5, 3);
        assert_eq!(Configuration::from_bytes(&t, &c.to_bytes()), c);
    }

    #[test]
    fn coarse_examples() {
        let t = Torus::new(2, 4);
        let c = Configuration::ones(&t);
        assert!(c.coarse_density(2).unwrap().iter().all(|&v| v == 1.0));
        let t1 = Torus::new(1, 8);
        let bits: Vec<u8> = (0..8).map(|i| (i % 2) as u8).collect();
        let cb = Configuration::from_bits(&t1, &bits);
        assert!(cb.coarse_density(2).unwrap().iter().all(|&v| v == 0.5));
        assert_eq!(cb.coarse_density(3), Err(Error::BlockMisaligned { block: 3, side: 8 }));
    }

    #[test]
    fn bernoulli_blocks_match_binomial_moments() {
        // 64^3 sites in 8^3 blocks: 512 blocks of 512 sites each
        let t = Torus::new(3, 64);
        let c = Configuration::bernoulli(&t, 0.3, 11);
        let blocks = c.coarse_density(8).unwrap();
        let n = blocks.len() as f64;
        let mean = blocks.iter().sum::<f64>() / n;
        let var = blocks.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / (n - 1.0);
        let p = 0.3;
        let bvar = p * (1.0 - p) / 512.0;
        assert!((mean - p).abs() < 4.0 * libm::sqrt(bvar / n));
        // sample variance of n normal-ish values has sd about bvar*sqrt(2/(n-1))
        assert!((var - bvar).abs() < 4.0 * bvar * libm::sqrt(2.0 / (n - 1.0)));
    }
}
