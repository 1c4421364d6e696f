//! Coalescing random walk probabilities and the generic reaction polynomial.
//!
//! Walkers jump at rate 1 each. With W starting walkers the system is driven
//! by one clock of rate W whose rings pick a walker uniformly; rings landing
//! on an absorbed walker are discarded. Two-walker systems are reduced to the
//! rate-2 difference walk.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use num_traits::{ToPrimitive, Zero};
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, OffspringLaw};
use crate::model::PerturbationSpec;
use crate::reaction::{q, qi, Provenance, ReactionPolynomial, Q};
use crate::rng::{kind, Stream};

/// Default time horizon for walk simulations.
pub const DEFAULT_CUTOFF: f64 = 1e4;

fn poisson(s: &mut Stream, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite mean").sample(s) as u64
}

/// Class labels (smallest member of each class) at each cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkOutcome {
    pub labels: Vec<Vec<u8>>,
    /// The run stopped early because `stop` fired; later labels repeat the last ones.
    pub stopped: bool,
}

/// Coalescing walks from `starts` (flattened, `d` entries each). `stop` is
/// consulted after every merge.
pub fn run_walkers(
    k: &Kernel,
    starts: &[i64],
    cutoffs: &[f64],
    s: &mut Stream,
    mut stop: impl FnMut(&[u8]) -> bool,
) -> WalkOutcome {
    let d = k.dim();
    let w = starts.len() / d;
    assert!(w >= 1 && w <= 255);
    let mut pos = starts.to_vec();
    let mut labels: Vec<u8> = (0..w as u8).collect();
    let mut alive = vec![true; w];
    let mut live = w;
    let mut stopped = false;
    let same = |pos: &[i64], a: usize, b: usize| pos[a * d..(a + 1) * d] == pos[b * d..(b + 1) * d];

    let merge = |labels: &mut [u8], a: u8, b: u8| {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        for l in labels.iter_mut() {
            if *l == hi {
                *l = lo;
            }
        }
    };

    for i in 1..w {
        for j in 0..i {
            if alive[j] && same(&pos, i, j) {
                alive[i] = false;
                live -= 1;
                let (a, b) = (labels[i], labels[j]);
                merge(&mut labels, a, b);
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(cutoffs.len());
    if live > 1 && stop(&labels) {
        stopped = true;
    }
    let mut t0 = 0.0;
    for &c in cutoffs {
        if !stopped && live > 1 && c > t0 {
            if w == 2 {
                // difference walk at rate 2
                let rings = poisson(s, 2.0 * (c - t0));
                let mut diff: Vec<i64> = (0..d).map(|a| pos[d + a] - pos[a]).collect();
                for _ in 0..rings {
                    let z = k.offset(k.sample_index(s));
                    let mut zero = true;
                    for a in 0..d {
                        diff[a] += z[a];
                        zero &= diff[a] == 0;
                    }
                    if zero {
                        live = 1;
                        alive[1] = false;
                        labels[1] = 0;
                        break;
                    }
                }
                for a in 0..d {
                    pos[d + a] = pos[a] + diff[a];
                }
                if live == 1 && stop(&labels) {
                    stopped = true;
                }
            } else {
                let rings = poisson(s, w as f64 * (c - t0));
                for _ in 0..rings {
                    let i = s.below(w);
                    if !alive[i] {
                        continue;
                    }
                    let z = k.offset(k.sample_index(s));
                    for a in 0..d {
                        pos[i * d + a] += z[a];
                    }
                    let hit = (0..w).find(|&j| j != i && alive[j] && same(&pos, i, j));
                    if let Some(j) = hit {
                        alive[i] = false;
                        live -= 1;
                        let (a, b) = (labels[i], labels[j]);
                        merge(&mut labels, a, b);
                        if live == 1 {
                            break;
                        }
                        if stop(&labels) {
                            stopped = true;
                            break;
                        }
                    }
                }
            }
        }
        t0 = t0.max(c);
        out.push(labels.clone());
    }
    WalkOutcome { labels: out, stopped }
}

// ---- pattern queries ----

#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    Explicit(Vec<i64>),
    /// i-th iid kernel draw (1-based).
    E(usize),
    /// i-th component of an offspring draw (1-based).
    Y(usize),
}

/// Start points `groups[g][p]`, each a signed sum of terms.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternQuery {
    pub dim: usize,
    pub groups: Vec<Vec<Vec<(i64, Term)>>>,
    pub text: String,
}

fn split_top(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(&s[start..i]);
                start = i + ch.len_utf8();
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

impl PatternQuery {
    /// Groups split by `|`, points by `,`, and each point is a sum of `0`,
    /// `e<k>`, `y<k>` or explicit `(x1,...,xd)` terms joined by `+` or `-`.
    pub fn parse(text: &str, dim: usize) -> Result<PatternQuery> {
        let bad = |why: &str| Error::BadPattern(format!("{text}: {why}"));
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let mut groups = Vec::new();
        for g in split_top(&compact, '|') {
            let mut pts = Vec::new();
            for p in split_top(g, ',') {
                if p.is_empty() {
                    return Err(bad("empty point"));
                }
                let mut terms = Vec::new();
                let mut rest = p;
                let mut sign = 1i64;
                if let Some(r) = rest.strip_prefix('-') {
                    sign = -1;
                    rest = r;
                } else if let Some(r) = rest.strip_prefix('+') {
                    rest = r;
                }
                loop {
                    let (tok, next) = if rest.starts_with('(') {
                        let close = rest.find(')').ok_or_else(|| bad("unclosed parenthesis"))?;
                        (&rest[..=close], &rest[close + 1..])
                    } else {
                        let end = rest.find(['+', '-']).unwrap_or(rest.len());
                        (&rest[..end], &rest[end..])
                    };
                    let term = if tok == "0" {
                        Term::Explicit(vec![0; dim])
                    } else if let Some(n) = tok.strip_prefix('e') {
                        Term::E(n.parse().ok().filter(|&n: &usize| n >= 1).ok_or_else(|| bad("bad e index"))?)
                    } else if let Some(n) = tok.strip_prefix('y') {
                        Term::Y(n.parse().ok().filter(|&n: &usize| n >= 1).ok_or_else(|| bad("bad y index"))?)
                    } else if tok.starts_with('(') {
                        let inner = &tok[1..tok.len() - 1];
                        let v: core::result::Result<Vec<i64>, _> = inner.split(',').map(|x| x.parse()).collect();
                        let v = v.map_err(|_| bad("bad coordinate"))?;
                        if v.len() != dim {
                            return Err(bad("coordinate count differs from dimension"));
                        }
                        Term::Explicit(v)
                    } else {
                        return Err(bad("unknown term"));
                    };
                    terms.push((sign, term));
                    if next.is_empty() {
                        break;
                    }
                    sign = if next.starts_with('-') { -1 } else { 1 };
                    rest = &next[1..];
                    if rest.is_empty() {
                        return Err(bad("dangling operator"));
                    }
                }
                pts.push(terms);
            }
            groups.push(pts);
        }
        if groups.is_empty() || groups.iter().all(|g| g.is_empty()) {
            return Err(bad("empty query"));
        }
        Ok(PatternQuery { dim, groups, text: String::from(text) })
    }

    pub fn points(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }

    fn max_index(&self, want_y: bool) -> usize {
        let mut m = 0;
        for g in &self.groups {
            for p in g {
                for (_, t) in p {
                    match (t, want_y) {
                        (Term::E(i), false) | (Term::Y(i), true) => m = m.max(*i),
                        _ => {}
                    }
                }
            }
        }
        m
    }

    /// Group index of every point, in point order.
    pub fn group_of(&self) -> Vec<usize> {
        self.groups.iter().enumerate().flat_map(|(g, pts)| core::iter::repeat_n(g, pts.len())).collect()
    }

    /// Draw the random terms (kernel draws first, then one offspring draw) and
    /// write the start points.
    pub fn realize(&self, k: &Kernel, offspring: Option<&OffspringLaw>, s: &mut Stream, out: &mut Vec<i64>) -> Result<()> {
        let d = self.dim;
        let ne = self.max_index(false);
        let ny = self.max_index(true);
        let mut es = vec![0i64; ne * d];
        for i in 0..ne {
            es[i * d..(i + 1) * d].copy_from_slice(k.sample_step(s));
        }
        let mut ys = Vec::new();
        if ny > 0 {
            let law = offspring.ok_or_else(|| Error::BadPattern(format!("{}: y terms need an offspring law", self.text)))?;
            if ny > law.n0() {
                return Err(Error::BadPattern(format!("{}: offspring has only {} points", self.text, law.n0())));
            }
            ys = vec![0i64; law.n0() * d];
            law.sample_into(s, &mut ys);
        }
        out.clear();
        for g in &self.groups {
            for p in g {
                let mut v = vec![0i64; d];
                for (sg, t) in p {
                    let src: &[i64] = match t {
                        Term::Explicit(x) => x,
                        Term::E(i) => &es[(i - 1) * d..i * d],
                        Term::Y(i) => &ys[(i - 1) * d..i * d],
                    };
                    for a in 0..d {
                        v[a] += sg * src[a];
                    }
                }
                out.extend_from_slice(&v);
            }
        }
        Ok(())
    }
}

/// Within-group points share a class and different groups never do.
pub fn pattern_holds(labels: &[u8], group_of: &[usize]) -> bool {
    for i in 0..labels.len() {
        for j in 0..i {
            if (labels[i] == labels[j]) != (group_of[i] == group_of[j]) {
                return false;
            }
        }
    }
    true
}

fn cross_merged(labels: &[u8], group_of: &[usize]) -> bool {
    (0..labels.len()).any(|i| (0..i).any(|j| labels[i] == labels[j] && group_of[i] != group_of[j]))
}

/// Success counts over a block of realizations, mergeable by addition.
/// `joint[a * C + b]` counts realizations succeeding at both cutoffs a and b.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PatternTally {
    pub n: u64,
    pub joint: Vec<u64>,
}

impl PatternTally {
    pub fn merge(&mut self, other: &PatternTally) {
        if self.joint.is_empty() {
            self.joint = vec![0; other.joint.len()];
        }
        self.n += other.n;
        for (a, b) in self.joint.iter_mut().zip(&other.joint) {
            *a += b;
        }
    }

    fn cutoffs(&self) -> usize {
        libm::sqrt(self.joint.len() as f64).round() as usize
    }

    pub fn count(&self, c: usize) -> u64 {
        self.joint[c * self.cutoffs() + c]
    }
}

/// Realizations `range` of a pattern query, with streams keyed by (seed, tag, index).
pub fn pattern_tally(
    query: &PatternQuery,
    k: &Kernel,
    offspring: Option<&OffspringLaw>,
    cutoffs: &[f64],
    seed: u64,
    tag: u64,
    range: Range<u64>,
) -> Result<PatternTally> {
    if query.dim != k.dim() {
        return Err(Error::DimensionMismatch { expected: k.dim(), got: query.dim });
    }
    let nc = cutoffs.len();
    let group_of = query.group_of();
    let mut tally = PatternTally { n: 0, joint: vec![0; nc * nc] };
    let mut starts = Vec::new();
    let mut ok = vec![false; nc];
    for r in range {
        let mut s = Stream::new(seed, &[kind::WALK, tag, r]);
        query.realize(k, offspring, &mut s, &mut starts)?;
        let out = run_walkers(k, &starts, cutoffs, &mut s, |l| cross_merged(l, &group_of));
        for (c, l) in out.labels.iter().enumerate() {
            ok[c] = pattern_holds(l, &group_of);
        }
        tally.n += 1;
        for a in 0..nc {
            for b in 0..nc {
                if ok[a] && ok[b] {
                    tally.joint[a * nc + b] += 1;
                }
            }
        }
    }
    Ok(tally)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoalescenceEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    pub cutoff: f64,
    /// Estimated distance to the infinite-horizon value, when requested.
    pub tail_bound: Option<f64>,
    /// Two-cutoff extrapolation of the infinite-horizon value.
    pub extrapolated: Option<f64>,
}

impl CoalescenceEstimate {
    pub fn from_count(count: u64, n: u64, cutoff: f64) -> Self {
        let p = count as f64 / n as f64;
        CoalescenceEstimate {
            value: p,
            stderr: libm::sqrt(p * (1.0 - p) / n as f64),
            n,
            cutoff,
            tail_bound: None,
            extrapolated: None,
        }
    }
}

pub fn estimate(query: &PatternQuery, k: &Kernel, cutoff: f64, n: u64, seed: u64) -> Result<CoalescenceEstimate> {
    let t = pattern_tally(query, k, None, &[cutoff], seed, 0, 0..n)?;
    Ok(CoalescenceEstimate::from_count(t.count(0), n, cutoff))
}

/// Estimate at `cutoff` plus a two-cutoff extrapolation from `cutoff/4`,
/// assuming the t^{-(d-2)/2} tail of transient walks (d >= 3).
pub fn extrapolate(tally: &PatternTally, dim: usize, cutoff: f64) -> CoalescenceEstimate {
    // tally cutoffs are [cutoff/4, cutoff]
    let n = tally.n;
    let mut est = CoalescenceEstimate::from_count(tally.count(1), n, cutoff);
    if dim >= 3 {
        let r = libm::pow(4.0, (dim as f64 - 2.0) / 2.0);
        let (a, b) = (r / (r - 1.0), -1.0 / (r - 1.0));
        let nf = n as f64;
        let p_hi = tally.count(1) as f64 / nf;
        let p_lo = tally.count(0) as f64 / nf;
        let both = tally.joint[1] as f64 / nf;
        let value = a * p_hi + b * p_lo;
        let second = a * a * p_hi + b * b * p_lo + 2.0 * a * b * both;
        let var = (second - value * value).max(0.0);
        est.extrapolated = Some(value);
        est.tail_bound = Some((p_hi - value).abs() + 2.0 * libm::sqrt(var / nf));
    }
    est
}

pub fn estimate_extrapolated(query: &PatternQuery, k: &Kernel, cutoff: f64, n: u64, seed: u64) -> Result<CoalescenceEstimate> {
    let t = pattern_tally(query, k, None, &[cutoff / 4.0, cutoff], seed, 0, 0..n)?;
    Ok(extrapolate(&t, k.dim(), cutoff))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkIdentityReport {
    pub k_deg: usize,
    pub p_0_e1: CoalescenceEstimate,
    pub p_e1_e2: CoalescenceEstimate,
    pub p_e1_e2e3: CoalescenceEstimate,
    /// p(e1|e2) - p(0|e1) and its combined standard error.
    pub residual_a: f64,
    pub stderr_a: f64,
    /// p(e1|e2+e3) / p(0|e1), its delta-method standard error, and 1 + 1/k.
    pub ratio_b: f64,
    pub stderr_b: f64,
    pub target_b: f64,
}

pub const IDENTITY_QUERIES: [&str; 3] = ["0|e1", "e1|e2", "e1|e2+e3"];

pub fn walk_identities_from_tallies(k: &Kernel, tallies: &[PatternTally; 3], cutoff: f64) -> WalkIdentityReport {
    let [a, b, c] = tallies;
    let e = |t: &PatternTally| CoalescenceEstimate::from_count(t.count(0), t.n, cutoff);
    let (p0, p12, p123) = (e(a), e(b), e(c));
    let ratio = p123.value / p0.value;
    let rel = libm::sqrt((p123.stderr / p123.value).powi(2) + (p0.stderr / p0.value).powi(2));
    WalkIdentityReport {
        k_deg: k.len(),
        residual_a: p12.value - p0.value,
        stderr_a: libm::sqrt(p12.stderr * p12.stderr + p0.stderr * p0.stderr),
        ratio_b: ratio,
        stderr_b: ratio * rel,
        target_b: 1.0 + 1.0 / k.len() as f64,
        p_0_e1: p0,
        p_e1_e2: p12,
        p_e1_e2e3: p123,
    }
}

/// The three two-walker probabilities behind the neighbor identities, each
/// from its own independent realizations.
pub fn walk_identities_check(k: &Kernel, cutoff: f64, n: u64, seed: u64) -> Result<WalkIdentityReport> {
    if !k.is_uniform() {
        return Err(Error::NotUniformKernel);
    }
    let mut ts: [PatternTally; 3] = Default::default();
    for (tag, text) in IDENTITY_QUERIES.iter().enumerate() {
        let qy = PatternQuery::parse(text, k.dim())?;
        ts[tag] = pattern_tally(&qy, k, None, &[cutoff], seed, tag as u64, 0..n)?;
    }
    Ok(walk_identities_from_tallies(k, &ts, cutoff))
}

// ---- partition law of {0, Y^1, ..., Y^N0} ----

/// Empirical law of the coalescence partition of walks started from 0 and an
/// offspring draw. Keys are canonical labels (each index mapped to the
/// smallest index of its block), which is equivalent to sorted blocks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PartitionLaw {
    pub n0: usize,
    pub n: u64,
    pub cutoff: f64,
    pub counts: BTreeMap<Vec<u8>, u64>,
}

impl PartitionLaw {
    pub fn merge(&mut self, other: &PartitionLaw) {
        self.n0 = other.n0;
        self.cutoff = other.cutoff;
        self.n += other.n;
        for (key, c) in &other.counts {
            *self.counts.entry(key.clone()).or_insert(0) += c;
        }
    }

    pub fn prob(&self, labels: &[u8]) -> f64 {
        self.counts.get(labels).copied().unwrap_or(0) as f64 / self.n as f64
    }

    pub fn stderr(&self, labels: &[u8]) -> f64 {
        let p = self.prob(labels);
        libm::sqrt(p * (1.0 - p) / self.n as f64)
    }

    /// Sorted blocks of sorted indices.
    pub fn blocks(labels: &[u8]) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            if l as usize == i {
                out.push(vec![i]);
            } else {
                out.iter_mut().find(|b| b[0] == l as usize).expect("canonical").push(i);
            }
        }
        out
    }

    /// Mean and standard error of a per-realization statistic of the partition.
    pub fn linear_stat(&self, f: impl Fn(&[u8]) -> f64) -> (f64, f64) {
        let n = self.n as f64;
        let (mut m1, mut m2) = (0.0, 0.0);
        for (key, &c) in &self.counts {
            let v = f(key);
            m1 += c as f64 * v;
            m2 += c as f64 * v * v;
        }
        let mean = m1 / n;
        let var = (m2 / n - mean * mean).max(0.0);
        (mean, libm::sqrt(var / n))
    }

    /// Sampler over the empirical law; one word per draw.
    pub fn sampler(&self) -> PartitionSampler {
        let mut keys = Vec::new();
        let mut cum = Vec::new();
        let mut acc = 0u64;
        for (key, &c) in &self.counts {
            acc += c;
            keys.push(key.clone());
            cum.push(acc);
        }
        PartitionSampler { keys, cum, total: acc }
    }
}

#[derive(Clone, Debug)]
pub struct PartitionSampler {
    keys: Vec<Vec<u8>>,
    cum: Vec<u64>,
    total: u64,
}

impl PartitionSampler {
    pub fn sample(&self, s: &mut Stream) -> &[u8] {
        let r = ((s.next_word() as u128 * self.total as u128) >> 64) as u64;
        let i = self.cum.partition_point(|&c| c <= r);
        &self.keys[i]
    }
}

/// Realizations `range` of the partition law.
pub fn nu0_tally(offspring: &OffspringLaw, k: &Kernel, cutoff: f64, seed: u64, range: Range<u64>) -> PartitionLaw {
    let d = k.dim();
    let n0 = offspring.n0();
    let mut law = PartitionLaw { n0, n: 0, cutoff, counts: BTreeMap::new() };
    let mut starts = vec![0i64; (n0 + 1) * d];
    for r in range {
        let mut s = Stream::new(seed, &[kind::WALK, u64::MAX, r]);
        offspring.sample_into(&mut s, &mut starts[d..]);
        let out = run_walkers(k, &starts, &[cutoff], &mut s, |_| false);
        *law.counts.entry(out.labels[0].clone()).or_insert(0) += 1;
        law.n += 1;
    }
    law
}

pub fn estimate_nu0(offspring: &OffspringLaw, k: &Kernel, cutoff: f64, n: u64, seed: u64) -> PartitionLaw {
    nu0_tally(offspring, k, cutoff, seed, 0..n)
}

// ---- the subset basis ----

/// Coefficients over subsets S of {1..N0} (bit i-1 of the index for i in S).
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetBasis {
    pub n0: usize,
    pub beta: Vec<Q>,
    pub delta: Vec<Q>,
}

fn inclusion_exclusion(t: &[Q]) -> Vec<Q> {
    let mut c = t.to_vec();
    let n = c.len();
    let mut bit = 1;
    while bit < n {
        for s in 0..n {
            if s & bit != 0 {
                let lower = c[s ^ bit].clone();
                c[s] -= lower;
            }
        }
        bit <<= 1;
    }
    c
}

/// Evaluate sum_S c(S) prod_{i in S} eta_i.
pub fn basis_eval(c: &[Q], eta: usize) -> Q {
    let mut acc = Q::zero();
    for (s, v) in c.iter().enumerate() {
        if s & !eta == 0 {
            acc += v;
        }
    }
    acc
}

pub fn g_to_basis_exact(g0: &[Q], g1: &[Q]) -> SubsetBasis {
    let n0 = g1.len().trailing_zeros() as usize;
    SubsetBasis { n0, beta: inclusion_exclusion(g1), delta: inclusion_exclusion(g0) }
}

/// Exact inclusion-exclusion transform of the tables (floats are read exactly).
pub fn g_to_basis(g0: &[f64], g1: &[f64]) -> SubsetBasis {
    let c = |t: &[f64]| t.iter().map(|&x| q(x)).collect::<Vec<Q>>();
    g_to_basis_exact(&c(g0), &c(g1))
}

/// g_i(eta) - e 1(eta_1 = i), the tables whose expectations are the
/// perturbation rates once the voter part e is removed (Y^1 must have law p).
pub fn tilde_tables(p: &PerturbationSpec, eps1_inv2: f64) -> (Vec<Q>, Vec<Q>) {
    let e = q(eps1_inv2);
    let mk = |i: usize, t: &[f64]| -> Vec<Q> {
        t.iter()
            .enumerate()
            .map(|(eta, &g)| if eta & 1 == i { q(g) - &e } else { q(g) })
            .collect()
    };
    (mk(0, &p.g0), mk(1, &p.g1))
}

/// Coefficient vector (length N0+2) of the contribution of one partition.
pub fn partition_poly(basis: &SubsetBasis, labels: &[u8]) -> Vec<Q> {
    let n0 = basis.n0;
    let mut c = vec![Q::zero(); n0 + 2];
    for s in 0..(1usize << n0) {
        let (b, dl) = (&basis.beta[s], &basis.delta[s]);
        if b.is_zero() && dl.is_zero() {
            continue;
        }
        let mut seen: Vec<u8> = Vec::new();
        let mut zero_hit = false;
        for i in 0..n0 {
            if s >> i & 1 == 1 {
                let l = labels[i + 1];
                zero_hit |= l == 0;
                if !seen.contains(&l) {
                    seen.push(l);
                }
            }
        }
        let m = seen.len();
        // (1 - xi(0)) prod xi(Y^S): u^m (1-u) unless some Y^i sits in 0's class
        if !zero_hit {
            c[m] += b;
            c[m + 1] -= b;
        }
        // xi(0) prod xi(Y^S): u^{#classes of {0} and Y^S}
        let m0 = if zero_hit { m } else { m + 1 };
        c[m0] -= dl;
    }
    c
}

/// f(u) assembled from an empirical partition law, with per-coefficient
/// standard errors.
pub fn reaction_poly_from_law(basis: &SubsetBasis, law: &PartitionLaw) -> ReactionPolynomial {
    let len = basis.n0 + 2;
    let n = law.n as f64;
    let mut mean = vec![Q::zero(); len];
    let mut m2 = vec![0.0f64; len];
    let nq = qi(law.n as i64);
    for (key, &cnt) in &law.counts {
        let c = partition_poly(basis, key);
        let w = qi(cnt as i64) / &nq;
        for j in 0..len {
            let cf = c[j].to_f64().unwrap_or(0.0);
            m2[j] += cnt as f64 * cf * cf;
            mean[j] += &c[j] * &w;
        }
    }
    let se: Vec<f64> = (0..len)
        .map(|j| {
            let mu = mean[j].to_f64().unwrap_or(0.0);
            libm::sqrt((m2[j] / n - mu * mu).max(0.0) / n)
        })
        .collect();
    ReactionPolynomial::new(mean, Provenance::MonteCarlo { n: law.n, cutoff: law.cutoff }).with_stderr(se)
}

/// Monte Carlo reaction polynomial of a perturbation in g-form.
pub fn reaction_poly_mc(
    p: &PerturbationSpec,
    eps1_inv2: f64,
    k: &Kernel,
    cutoff: f64,
    n: u64,
    seed: u64,
) -> (ReactionPolynomial, PartitionLaw) {
    let (t0, t1) = tilde_tables(p, eps1_inv2);
    let basis = g_to_basis_exact(&t0, &t1);
    let law = estimate_nu0(&p.offspring, k, cutoff, n, seed);
    (reaction_poly_from_law(&basis, &law), law)
}

/// f'(0) from the dedicated formula; `None` when beta(empty) != 0.
pub fn fprime0_from_law(basis: &SubsetBasis, law: &PartitionLaw) -> Option<(f64, f64)> {
    if !basis.beta[0].is_zero() {
        return None;
    }
    let n0 = basis.n0;
    let stat = |labels: &[u8]| -> f64 {
        let mut v = Q::zero();
        for s in 1..(1usize << n0) {
            let members: Vec<u8> = (0..n0).filter(|i| s >> i & 1 == 1).map(|i| labels[i + 1]).collect();
            let one_class = members.iter().all(|&l| l == members[0]);
            if one_class && members[0] != 0 {
                v += &basis.beta[s];
            }
            if one_class && members[0] == 0 {
                v -= &basis.delta[s];
            }
        }
        // S empty: {0} alone is always one class
        v -= &basis.delta[0];
        v.to_f64().unwrap_or(f64::NAN)
    };
    Some(law.linear_stat(stat))
}

/// p2 = P(0 | Y1, Y2) and p3 = P(0 | Y1 | Y2) read off a law with N0 = 2.
pub fn p2_p3(law: &PartitionLaw) -> (f64, f64) {
    (law.prob(&[0, 1, 1]), law.prob(&[0, 1, 2]))
}
