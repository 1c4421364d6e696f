//! Finite-support random-walk kernels on Z^d and offspring laws.

use alloc::vec;
use alloc::vec::Vec;
use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::rng::Stream;

pub type Weight = Ratio<i64>;

/// Largest supported offspring count.
pub const MAX_N0: usize = 16;

/// Cumulative thresholds in units of 2^-64 for one-word categorical sampling.
fn thresholds(weights: &[Weight]) -> Vec<u64> {
    let total: Weight = weights.iter().copied().fold(Weight::zero(), |a, b| a + b);
    if weights.is_empty() || total <= Weight::zero() {
        return Vec::new();
    }
    let mut cum = Weight::zero();
    let mut out = Vec::with_capacity(weights.len());
    for (j, w) in weights.iter().enumerate() {
        cum += *w;
        if j + 1 == weights.len() {
            out.push(u64::MAX);
        } else {
            let q = cum / total;
            let t = ((*q.numer() as u128) << 64) / (*q.denom() as u128);
            out.push(t.min(u64::MAX as u128) as u64);
        }
    }
    out
}

#[inline]
fn pick(thresholds: &[u64], word: u64) -> usize {
    // first j with word < t_j; the last threshold is a sentinel.
    let j = thresholds.partition_point(|&t| t <= word);
    j.min(thresholds.len() - 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    dim: usize,
    offsets: Vec<i64>,
    weights: Vec<Weight>,
    probs: Vec<f64>,
    cdf: Vec<u64>,
    uniform: bool,
    counts: Vec<u64>,
    denom: u64,
}

impl Kernel {
    /// Build from raw atoms without validating (see [`Kernel::validate`]).
    pub fn from_atoms(dim: usize, atoms: &[(Vec<i64>, Weight)]) -> Result<Kernel> {
        let mut offsets = Vec::with_capacity(atoms.len() * dim);
        let mut weights = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            if x.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
            }
            offsets.extend_from_slice(x);
            weights.push(*w);
        }
        let probs = weights.iter().map(|w| w.to_f64().unwrap_or(f64::NAN)).collect();
        let uniform = weights.windows(2).all(|p| p[0] == p[1]);
        let cdf = thresholds(&weights);
        let denom = weights.iter().fold(1i64, |l, w| num_integer::lcm(l, *w.denom())).max(1) as u64;
        let counts = weights.iter().map(|w| (*w.numer() * (denom as i64 / *w.denom())).max(0) as u64).collect();
        Ok(Kernel { dim, offsets, weights, probs, cdf, uniform, counts, denom })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
    pub fn offset(&self, j: usize) -> &[i64] {
        &self.offsets[j * self.dim..(j + 1) * self.dim]
    }
    pub fn weight(&self, j: usize) -> Weight {
        self.weights[j]
    }
    pub fn prob(&self, j: usize) -> f64 {
        self.probs[j]
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
    /// Weights as integers over the common denominator [`Kernel::denom`].
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
    pub fn denom(&self) -> u64 {
        self.denom
    }
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }
    pub fn atoms(&self) -> impl Iterator<Item = (&[i64], Weight)> + '_ {
        (0..self.len()).map(move |j| (self.offset(j), self.weights[j]))
    }

    /// Largest coordinate magnitude in the support.
    pub fn range(&self) -> usize {
        self.offsets.iter().map(|x| x.unsigned_abs() as usize).max().unwrap_or(0)
    }

    /// Exact variance of the first coordinate.
    pub fn sigma2_exact(&self) -> Weight {
        self.atoms().fold(Weight::zero(), |acc, (x, w)| acc + w * (x[0] * x[0]))
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2_exact().to_f64().unwrap()
    }

    /// Index of an atom drawn from one word of the stream.
    #[inline]
    pub fn sample_index(&self, s: &mut Stream) -> usize {
        if self.uniform {
            s.below(self.len())
        } else {
            pick(&self.cdf, s.next_word())
        }
    }

    #[inline]
    pub fn sample_step(&self, s: &mut Stream) -> &[i64] {
        let j = self.sample_index(s);
        self.offset(j)
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        (0..self.len()).find(|&j| self.offset(j) == x)
    }

    /// Check the standing assumptions and return sigma^2.
    pub fn validate(&self) -> Result<Weight> {
        if self.is_empty() || self.weights.iter().any(|w| *w <= Weight::zero()) {
            return Err(Error::NotNormalized);
        }
        let total = self.weights.iter().copied().fold(Weight::zero(), |a, b| a + b);
        if !total.is_one() {
            return Err(Error::NotNormalized);
        }
        for (x, _) in self.atoms() {
            if x.iter().all(|&c| c == 0) {
                return Err(Error::OriginInSupport);
            }
        }
        let mass_at = |p: &[i64]| {
            self.atoms().filter(|(y, _)| *y == p).fold(Weight::zero(), |a, (_, v)| a + v)
        };
        for (x, _) in self.atoms() {
            let neg: Vec<i64> = x.iter().map(|c| -c).collect();
            if mass_at(x) != mass_at(&neg) {
                return Err(Error::Asymmetric(x.to_vec()));
            }
        }
        let d = self.dim;
        if lattice_index(d, &self.offsets) != Some(1) {
            return Err(Error::Reducible);
        }
        let s2 = self.sigma2_exact();
        for i in 0..d {
            for j in 0..d {
                let c = self.atoms().fold(Weight::zero(), |acc, (x, w)| acc + w * (x[i] * x[j]));
                let target = if i == j { s2 } else { Weight::zero() };
                if c != target {
                    return Err(Error::NonIsotropic);
                }
            }
        }
        Ok(s2)
    }
}

/// Index of the subgroup of Z^d generated by the rows (None when rank < d).
///
/// Integer row reduction to echelon form; the product of the pivots equals the
/// product of the Smith invariant factors.
pub fn lattice_index(d: usize, flat: &[i64]) -> Option<u128> {
    if d == 0 {
        return Some(1);
    }
    let mut rows: Vec<Vec<i128>> =
        flat.chunks(d).map(|r| r.iter().map(|&c| c as i128).collect()).collect();
    let mut index: u128 = 1;
    let mut top = 0;
    for col in 0..d {
        loop {
            let mut best: Option<usize> = None;
            for r in top..rows.len() {
                if rows[r][col] != 0
                    && best.is_none_or(|b| rows[r][col].abs() < rows[b][col].abs())
                {
                    best = Some(r);
                }
            }
            let Some(b) = best else { return None };
            rows.swap(top, b);
            let mut done = true;
            for r in top + 1..rows.len() {
                if rows[r][col] != 0 {
                    let q = rows[r][col].div_euclid(rows[top][col]);
                    for c in col..d {
                        let v = rows[top][c];
                        rows[r][c] -= q * v;
                    }
                    if rows[r][col] != 0 {
                        done = false;
                    }
                }
            }
            if done {
                break;
            }
        }
        index *= rows[top][col].unsigned_abs();
        top += 1;
    }
    Some(index)
}

/// Uniform law on the 2d unit vectors.
pub fn nn_kernel(d: usize) -> Kernel {
    let w = Weight::new(1, 2 * d as i64);
    let mut atoms = Vec::with_capacity(2 * d);
    for i in 0..d {
        for s in [1i64, -1] {
            let mut x = vec![0i64; d];
            x[i] = s;
            atoms.push((x, w));
        }
    }
    Kernel::from_atoms(d, &atoms).expect("consistent dimensions")
}

/// All points of [-L, L]^d other than the origin, in lexicographic order.
pub fn box_points(d: usize, l: i64) -> Vec<Vec<i64>> {
    let side = (2 * l + 1) as usize;
    let total = side.pow(d as u32);
    let mut out = Vec::with_capacity(total - 1);
    for mut n in 0..total {
        let mut x = vec![0i64; d];
        for c in x.iter_mut().rev() {
            *c = (n % side) as i64 - l;
            n /= side;
        }
        if x.iter().any(|&c| c != 0) {
            out.push(x);
        }
    }
    out
}

/// Uniform law on [-L, L]^d minus the origin.
pub fn box_kernel(d: usize, l: i64) -> Kernel {
    let pts = box_points(d, l);
    let w = Weight::new(1, pts.len() as i64);
    let atoms: Vec<_> = pts.into_iter().map(|x| (x, w)).collect();
    Kernel::from_atoms(d, &atoms).expect("consistent dimensions")
}

/// Law q of the offspring vector (Y^1, ..., Y^{N0}).
#[derive(Clone, Debug, PartialEq)]
pub enum OffspringLaw {
    /// Y^i i.i.d. with law `kernel`.
    Independent { kernel: Kernel, n0: usize },
    /// Uniform ordered n0-tuple of distinct points of `points`.
    WithoutReplacement { dim: usize, points: Vec<i64>, n0: usize },
    /// Explicit finite list of atoms; `offsets` holds n0*dim entries per atom.
    Atoms { dim: usize, n0: usize, offsets: Vec<i64>, weights: Vec<Weight>, cdf: Vec<u64> },
}

impl OffspringLaw {
    pub fn atoms_law(dim: usize, n0: usize, atoms: &[(Vec<Vec<i64>>, Weight)]) -> Result<Self> {
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        for (ys, w) in atoms {
            if ys.len() != n0 {
                return Err(Error::DimensionMismatch { expected: n0, got: ys.len() });
            }
            for y in ys {
                if y.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: y.len() });
                }
                offsets.extend_from_slice(y);
            }
            weights.push(*w);
        }
        let total = weights.iter().copied().fold(Weight::zero(), |a, b| a + b);
        if weights.is_empty() || !total.is_one() || weights.iter().any(|w| w.is_negative()) {
            return Err(Error::NotNormalized);
        }
        let cdf = thresholds(&weights);
        Ok(OffspringLaw::Atoms { dim, n0, offsets, weights, cdf })
    }

    pub fn without_replacement(points: &[Vec<i64>], n0: usize) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        if n0 == 0 || n0 > points.len() || n0 > MAX_N0 {
            return Err(Error::InvalidRates("offspring count exceeds neighborhood size"));
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            flat.extend_from_slice(p);
        }
        Ok(OffspringLaw::WithoutReplacement { dim, points: flat, n0 })
    }

    pub fn n0(&self) -> usize {
        match self {
            OffspringLaw::Independent { n0, .. }
            | OffspringLaw::WithoutReplacement { n0, .. }
            | OffspringLaw::Atoms { n0, .. } => *n0,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            OffspringLaw::Independent { kernel, .. } => kernel.dim(),
            OffspringLaw::WithoutReplacement { dim, .. } | OffspringLaw::Atoms { dim, .. } => *dim,
        }
    }

    /// Largest coordinate magnitude of any Y^i.
    pub fn range(&self) -> usize {
        match self {
            OffspringLaw::Independent { kernel, .. } => kernel.range(),
            OffspringLaw::WithoutReplacement { points, .. } => {
                points.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0)
            }
            OffspringLaw::Atoms { offsets, .. } => {
                offsets.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0)
            }
        }
    }

    /// Words consumed by one call to [`OffspringLaw::sample_into`].
    pub fn words_per_sample(&self) -> u64 {
        match self {
            OffspringLaw::Atoms { .. } => 1,
            _ => self.n0() as u64,
        }
    }

    /// Draw (Y^1..Y^{N0}) into `out` (n0*dim entries).
    pub fn sample_into(&self, s: &mut Stream, out: &mut [i64]) {
        match self {
            OffspringLaw::Independent { kernel, n0 } => {
                let d = kernel.dim();
                for i in 0..*n0 {
                    out[i * d..(i + 1) * d].copy_from_slice(kernel.sample_step(s));
                }
            }
            OffspringLaw::WithoutReplacement { dim, points, n0 } => {
                let m = points.len() / dim;
                // sorted indices already taken; the r-th free index is found by
                // skipping past them in order
                let mut taken = [0usize; MAX_N0];
                for i in 0..*n0 {
                    let mut r = s.below(m - i);
                    let mut pos = 0;
                    while pos < i && taken[pos] <= r {
                        r += 1;
                        pos += 1;
                    }
                    taken.copy_within(pos..i, pos + 1);
                    taken[pos] = r;
                    out[i * dim..(i + 1) * dim].copy_from_slice(&points[r * dim..(r + 1) * dim]);
                }
            }
            OffspringLaw::Atoms { dim, n0, offsets, cdf, .. } => {
                let j = pick(cdf, s.next_word());
                let w = n0 * dim;
                out[..w].copy_from_slice(&offsets[j * w..(j + 1) * w]);
            }
        }
    }

    /// Every atom with its exact probability (may be large for subset laws).
    pub fn atoms(&self) -> Vec<(Vec<i64>, Weight)> {
        match self {
            OffspringLaw::Independent { kernel, n0 } => {
                let mut out = vec![(Vec::new(), Weight::one())];
                for _ in 0..*n0 {
                    let mut next = Vec::with_capacity(out.len() * kernel.len());
                    for (ys, w) in &out {
                        for (x, v) in kernel.atoms() {
                            let mut y = ys.clone();
                            y.extend_from_slice(x);
                            next.push((y, *w * v));
                        }
                    }
                    out = next;
                }
                out
            }
            OffspringLaw::WithoutReplacement { dim, points, n0 } => {
                let m = points.len() / dim;
                let mut count: i64 = 1;
                for i in 0..*n0 {
                    count *= (m - i) as i64;
                }
                let w = Weight::new(1, count);
                let mut out = Vec::new();
                let mut idx = Vec::with_capacity(*n0);
                fn rec(
                    m: usize,
                    n0: usize,
                    dim: usize,
                    points: &[i64],
                    idx: &mut Vec<usize>,
                    w: Weight,
                    out: &mut Vec<(Vec<i64>, Weight)>,
                ) {
                    if idx.len() == n0 {
                        let mut y = Vec::with_capacity(n0 * dim);
                        for &r in idx.iter() {
                            y.extend_from_slice(&points[r * dim..(r + 1) * dim]);
                        }
                        out.push((y, w));
                        return;
                    }
                    for r in 0..m {
                        if !idx.contains(&r) {
                            idx.push(r);
                            rec(m, n0, dim, points, idx, w, out);
                            idx.pop();
                        }
                    }
                }
                rec(m, *n0, *dim, points, &mut idx, w, &mut out);
                out
            }
            OffspringLaw::Atoms { dim, n0, offsets, weights, .. } => {
                let w = n0 * dim;
                weights.iter().enumerate().map(|(j, v)| (offsets[j * w..(j + 1) * w].to_vec(), *v)).collect()
            }
        }
    }
}

/// N0 = 2, Y^1 and Y^2 independent with law k.
pub fn independent_pair_law(k: &Kernel) -> OffspringLaw {
    OffspringLaw::Independent { kernel: k.clone(), n0: 2 }
}
