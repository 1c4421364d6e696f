//! Exact forward simulation on a torus.
//!
//! The graphical backend drives every site by two Poisson streams (voter
//! arrows at `voter_rate`, reaction arrows at `cstar`), each keyed by
//! `(seed, kind, site)`. Events are merged in (time, site, kind) order. The
//! direct backend runs the unreduced chain with exact closed-form rates.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::error::{Error, Result};
pub use crate::lattice::{Configuration, Torus};
use crate::kernel::{Kernel, OffspringLaw};
use crate::model::{fitness, Backend, Family, ModelSpec, PerturbationSpec};
use crate::rng::{kind, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct VoterEvent {
    pub t: f64,
    /// Index of the kernel atom Z.
    pub step: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReactionEvent {
    pub t: f64,
    /// Y^1..Y^{N0}, flattened (n0 * d entries).
    pub ys: Vec<i64>,
    pub u: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SiteLog {
    pub voter: Vec<VoterEvent>,
    pub reaction: Vec<ReactionEvent>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    pub horizon: f64,
    pub seed: u64,
    pub sites: Vec<SiteLog>,
}

impl EventLog {
    pub fn event_count(&self) -> usize {
        self.sites.iter().map(|s| s.voter.len() + s.reaction.len()).sum()
    }
}

/// Voter arrows at one site.
#[derive(Clone, Debug)]
struct VoterGen {
    s: Stream,
    t: f64,
}

impl VoterGen {
    fn new(seed: u64, site: usize) -> Self {
        VoterGen { s: Stream::new(seed, &[kind::VOTER, site as u64]), t: 0.0 }
    }
    /// Advance to the next arrow; two words per event.
    #[inline]
    fn next(&mut self, rate: f64, k: &Kernel) -> (f64, u32) {
        self.t += self.s.exp(rate);
        let j = k.sample_index(&mut self.s) as u32;
        (self.t, j)
    }
}

/// Reaction arrows at one site.
#[derive(Clone, Debug)]
struct ReactionGen {
    s: Stream,
    t: f64,
}

impl ReactionGen {
    fn new(seed: u64, site: usize) -> Self {
        ReactionGen { s: Stream::new(seed, &[kind::REACTION, site as u64]), t: 0.0 }
    }
    /// Advance to the next arrow: time, Y (via `fill`), then U.
    #[inline]
    fn next(&mut self, rate: f64, fill: impl FnOnce(&mut Stream)) -> (f64, f64) {
        self.t += self.s.exp(rate);
        fill(&mut self.s);
        let u = self.s.uniform();
        (self.t, u)
    }
}

/// Materialize every event up to `horizon`.
pub fn gen_log(model: &ModelSpec, torus: &Torus, horizon: f64, seed: u64) -> Result<EventLog> {
    let p = graphical_spec(model)?;
    let n0 = p.n0();
    let d = torus.dim();
    let mut sites = Vec::with_capacity(torus.sites());
    for x in 0..torus.sites() {
        let mut log = SiteLog::default();
        if horizon > 0.0 && model.voter_rate > 0.0 {
            let mut g = VoterGen::new(seed, x);
            loop {
                let (t, step) = g.next(model.voter_rate, &model.kernel);
                if t > horizon {
                    break;
                }
                log.voter.push(VoterEvent { t, step });
            }
        }
        if horizon > 0.0 {
            let mut g = ReactionGen::new(seed, x);
            loop {
                let mut ys = vec![0i64; n0 * d];
                let (t, u) = g.next(p.cstar, |s| p.offspring.sample_into(s, &mut ys));
                if t > horizon {
                    break;
                }
                log.reaction.push(ReactionEvent { t, ys, u });
            }
        }
        sites.push(log);
    }
    Ok(EventLog { horizon, seed, sites })
}

fn graphical_spec(model: &ModelSpec) -> Result<&PerturbationSpec> {
    model.perturbation.as_ref().ok_or(Error::InvalidRates("graphical backend needs a g-form"))
}

/// Bit-packed eta for the values at x + Y^j.
#[inline]
fn eta_at(torus: &Torus, cfg: &Configuration, x: usize, ys: &[i64], n0: usize) -> usize {
    let d = torus.dim();
    let mut eta = 0usize;
    for j in 0..n0 {
        eta |= (cfg.get(torus.shift(x, &ys[j * d..(j + 1) * d])) as usize) << j;
    }
    eta
}

/// Reaction rule: flip iff U < g_{1-i}(eta) / c*.
#[inline]
pub fn reaction_flips(p: &PerturbationSpec, current: u8, eta: usize, u: f64) -> bool {
    u < p.g(1 - current, eta) / p.cstar
}

#[inline]
fn key(t: f64, site: usize, k: u64) -> u128 {
    ((t.to_bits() as u128) << 64) | ((site as u128) << 1) | k as u128
}

#[inline]
fn unkey(k: u128) -> (usize, u64) {
    (((k as u64) >> 1) as usize, (k as u64) & 1)
}

/// Exact priority queue over `key`s for event streams whose times only grow:
/// a ring of time buckets of width `width`, plus a heap for keys beyond the ring.
struct EventQueue {
    width: f64,
    buckets: Vec<Vec<u128>>,
    mask: u64,
    /// Absolute index of the bucket being drained; it is kept sorted descending.
    cur: u64,
    far: BinaryHeap<Reverse<u128>>,
    len: usize,
}

impl EventQueue {
    fn new(total_rate: f64, expected: usize) -> Self {
        let nb = (expected / 4).clamp(1024, 1 << 20).next_power_of_two();
        let width = if total_rate > 0.0 { 16.0 / total_rate } else { 1.0 };
        EventQueue {
            width,
            buckets: (0..nb).map(|_| Vec::new()).collect(),
            mask: nb as u64 - 1,
            cur: 0,
            far: BinaryHeap::new(),
            len: 0,
        }
    }

    #[inline]
    fn bucket_of(&self, k: u128) -> u64 {
        let t = f64::from_bits((k >> 64) as u64);
        let b = t / self.width;
        if b >= 1.8e19 {
            u64::MAX
        } else {
            b as u64
        }
    }

    #[inline]
    fn push(&mut self, k: u128) {
        self.len += 1;
        let b = self.bucket_of(k);
        debug_assert!(b >= self.cur);
        if b == self.cur {
            let v = &mut self.buckets[(b & self.mask) as usize];
            let at = v.partition_point(|&e| e > k);
            v.insert(at, k);
        } else if b - self.cur <= self.mask {
            self.buckets[(b & self.mask) as usize].push(k);
        } else {
            self.far.push(Reverse(k));
        }
    }

    #[inline]
    fn pop(&mut self) -> Option<u128> {
        if self.len == 0 {
            return None;
        }
        loop {
            let i = (self.cur & self.mask) as usize;
            if let Some(k) = self.buckets[i].pop() {
                self.len -= 1;
                return Some(k);
            }
            self.advance();
        }
    }

    fn advance(&mut self) {
        self.cur += 1;
        let ring_empty = self.len == self.far.len();
        if ring_empty {
            // jump straight to the first far bucket
            if let Some(&Reverse(k)) = self.far.peek() {
                self.cur = self.cur.max(self.bucket_of(k));
            }
        }
        let end = self.cur.saturating_add(self.mask);
        while let Some(&Reverse(k)) = self.far.peek() {
            let b = self.bucket_of(k);
            if b > end {
                break;
            }
            self.far.pop();
            self.buckets[(b & self.mask) as usize].push(k);
        }
        let v = &mut self.buckets[(self.cur & self.mask) as usize];
        v.sort_unstable_by(|a, b| b.cmp(a));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardRun {
    pub config: Configuration,
    pub snapshots: Vec<(f64, Configuration)>,
    pub events: u64,
}

/// Simulate from `xi0` to time `horizon`, recording copies at `snapshot_times`
/// (which must be sorted and at most `horizon`).
pub fn simulate_forward(
    model: &ModelSpec,
    xi0: &Configuration,
    horizon: f64,
    seed: u64,
    backend: Backend,
    snapshot_times: &[f64],
) -> Result<ForwardRun> {
    let torus = xi0.torus();
    if torus.side() <= 2 * model.interaction_range() {
        return Err(Error::TorusTooSmall { side: torus.side(), range: model.interaction_range() });
    }
    match backend {
        Backend::Graphical => run_graphical(model, xi0, horizon, seed, snapshot_times),
        Backend::Direct => run_direct(model, xi0, horizon, seed, snapshot_times),
    }
}

struct Snapshots<'a> {
    times: &'a [f64],
    next: usize,
    out: Vec<(f64, Configuration)>,
}

impl Snapshots<'_> {
    #[inline]
    fn before(&mut self, t: f64, cfg: &Configuration) {
        while self.next < self.times.len() && self.times[self.next] < t {
            self.out.push((self.times[self.next], cfg.clone()));
            self.next += 1;
        }
    }
}

fn run_graphical(
    model: &ModelSpec,
    xi0: &Configuration,
    horizon: f64,
    seed: u64,
    snapshot_times: &[f64],
) -> Result<ForwardRun> {
    let p = graphical_spec(model)?;
    let torus = xi0.torus().clone();
    let n = torus.sites();
    let d = torus.dim();
    let n0 = p.n0();
    let k = &model.kernel;
    let klen = k.len();
    let table = if n.saturating_mul(klen) <= 1 << 26 {
        let mut flat = Vec::with_capacity(klen * d);
        for j in 0..klen {
            flat.extend_from_slice(k.offset(j));
        }
        Some(torus.shift_table(&flat))
    } else {
        None
    };
    // offspring drawn from the voter kernel can reuse the neighbor table
    let pair_kernel = match &p.offspring {
        OffspringLaw::Independent { kernel, .. } if kernel == k && table.is_some() => true,
        _ => false,
    };
    let nbr = |x: usize, j: usize| -> usize {
        match &table {
            Some(t) => t[x * klen + j] as usize,
            None => torus.shift(x, k.offset(j)),
        }
    };

    let mut cfg = xi0.clone();
    let mut snaps = Snapshots { times: snapshot_times, next: 0, out: Vec::new() };
    let mut heap = EventQueue::new(n as f64 * (model.voter_rate + p.cstar), n);
    let mut vg: Vec<VoterGen> = Vec::new();
    let mut rg: Vec<ReactionGen> = Vec::with_capacity(n);
    let mut pending_step = vec![0u32; if model.voter_rate > 0.0 { n } else { 0 }];
    let mut ys = vec![0i64; n0 * d];
    let mut idx = [0usize; crate::kernel::MAX_N0];
    if horizon > 0.0 {
        if model.voter_rate > 0.0 {
            vg.reserve(n);
            for x in 0..n {
                let mut g = VoterGen::new(seed, x);
                let (t, j) = g.next(model.voter_rate, k);
                pending_step[x] = j;
                vg.push(g);
                heap.push(key(t, x, 0));
            }
        }
        for x in 0..n {
            // the reaction marks are drawn when the event fires; only the time
            // is needed to schedule it
            let mut g = ReactionGen::new(seed, x);
            g.t += g.s.exp(p.cstar);
            let t = g.t;
            rg.push(g);
            heap.push(key(t, x, 1));
        }
    }
    let mut events = 0u64;
    while let Some(top) = heap.pop() {
        let t = f64::from_bits((top >> 64) as u64);
        if t > horizon {
            break;
        }
        snaps.before(t, &cfg);
        events += 1;
        let (x, kd) = unkey(top);
        if kd == 0 {
            let y = nbr(x, pending_step[x] as usize);
            let v = cfg.get(y);
            cfg.set(x, v);
            let (tn, j) = vg[x].next(model.voter_rate, k);
            pending_step[x] = j;
            heap.push(key(tn, x, 0));
        } else {
            let g = &mut rg[x];
            let eta = if pair_kernel {
                let mut eta = 0usize;
                for (jj, slot) in idx.iter_mut().enumerate().take(n0) {
                    *slot = k.sample_index(&mut g.s);
                    eta |= (cfg.get(nbr(x, *slot)) as usize) << jj;
                }
                eta
            } else {
                p.offspring.sample_into(&mut g.s, &mut ys);
                eta_at(&torus, &cfg, x, &ys, n0)
            };
            let u = g.s.uniform();
            if reaction_flips(p, cfg.get(x), eta, u) {
                cfg.flip(x);
            }
            g.t += g.s.exp(p.cstar);
            heap.push(key(g.t, x, 1));
        }
    }
    snaps.before(f64::INFINITY, &cfg);
    Ok(ForwardRun { config: cfg, snapshots: snaps.out, events })
}

/// Replay a materialized log in global (time, site, kind) order.
pub fn replay_log(model: &ModelSpec, xi0: &Configuration, log: &EventLog, horizon: f64) -> Result<Configuration> {
    let p = graphical_spec(model)?;
    if horizon > log.horizon {
        return Err(Error::HorizonExceeded { requested: horizon, horizon: log.horizon });
    }
    let torus = xi0.torus();
    let mut all: Vec<(u128, usize)> = Vec::with_capacity(log.event_count());
    for (x, s) in log.sites.iter().enumerate() {
        for (i, e) in s.voter.iter().enumerate() {
            all.push((key(e.t, x, 0), i));
        }
        for (i, e) in s.reaction.iter().enumerate() {
            all.push((key(e.t, x, 1), i));
        }
    }
    all.sort_unstable();
    let mut cfg = xi0.clone();
    for (kk, i) in all {
        let t = f64::from_bits((kk >> 64) as u64);
        if t > horizon {
            break;
        }
        let (x, kd) = unkey(kk);
        if kd == 0 {
            let e = &log.sites[x].voter[i];
            let y = torus.shift(x, model.kernel.offset(e.step as usize));
            let v = cfg.get(y);
            cfg.set(x, v);
        } else {
            let e = &log.sites[x].reaction[i];
            let eta = eta_at(torus, &cfg, x, &e.ys, p.n0());
            if reaction_flips(p, cfg.get(x), eta, e.u) {
                cfg.flip(x);
            }
        }
    }
    Ok(cfg)
}

/// Neighbor tables and running kernel-weighted counts of ones, kept current
/// under single-site flips.
struct LocalCounts {
    k: usize,
    fwd: Vec<u32>,
    back: Vec<u32>,
    weighted: Vec<u64>,
    ones: Vec<u32>,
}

impl LocalCounts {
    fn new(kernel: &Kernel, cfg: &Configuration) -> Self {
        let torus = cfg.torus();
        let d = torus.dim();
        let k = kernel.len();
        let mut flat = Vec::with_capacity(k * d);
        let mut neg = Vec::with_capacity(k * d);
        for j in 0..k {
            flat.extend_from_slice(kernel.offset(j));
            neg.extend(kernel.offset(j).iter().map(|&o| -o));
        }
        let fwd = torus.shift_table(&flat);
        let back = torus.shift_table(&neg);
        let n = torus.sites();
        let mut weighted = vec![0u64; n];
        let mut ones = vec![0u32; n];
        for x in 0..n {
            for j in 0..k {
                if cfg.get(fwd[x * k + j] as usize) == 1 {
                    weighted[x] += kernel.counts()[j];
                    ones[x] += 1;
                }
            }
        }
        LocalCounts { k, fwd, back, weighted, ones }
    }

    fn flipped(&mut self, kernel: &Kernel, y: usize, now: u8) {
        for j in 0..self.k {
            let x = self.back[y * self.k + j] as usize;
            if now == 1 {
                self.weighted[x] += kernel.counts()[j];
                self.ones[x] += 1;
            } else {
                self.weighted[x] -= kernel.counts()[j];
                self.ones[x] -= 1;
            }
        }
    }

    /// Same value as [`ModelSpec::direct_rate`], from the cached counts.
    fn rate(&self, model: &ModelSpec, cfg: &Configuration, x: usize) -> Result<f64> {
        let i = cfg.get(x);
        let e2 = model.eps_inv2();
        let denom = model.kernel.denom();
        let f = |j: u8| {
            let w1 = self.weighted[x];
            (if j == 1 { w1 } else { denom - w1 }) as f64 / denom as f64
        };
        match &model.family {
            Family::Voter => Ok(e2 * f(1 - i)),
            Family::Lv { theta0, theta1 } => {
                let j = 1 - i;
                let fj = f(j);
                let th = if j == 1 { *theta0 } else { *theta1 };
                let r = e2 * fj + th * fj * fj;
                if r < -1e-12 {
                    return Err(Error::NegativeRate(r));
                }
                Ok(r.max(0.0))
            }
            Family::Game(gp) => {
                let mut num = 0.0;
                let mut den = 0.0;
                for j in 0..self.k {
                    let y = self.fwd[x * self.k + j] as usize;
                    let s = cfg.get(y);
                    let n1 = self.ones[y] as usize;
                    let rho = fitness(gp, s, n1, self.k - n1);
                    den += rho;
                    if s == 1 - i {
                        num += rho;
                    }
                }
                Ok(e2 * if den == 0.0 { 0.0 } else { num / den })
            }
            _ => model.direct_rate(cfg, x),
        }
    }
}

/// Uniformized chain: proposals at total rate n * bound, accepted with
/// probability rate / bound.
fn run_direct(
    model: &ModelSpec,
    xi0: &Configuration,
    horizon: f64,
    seed: u64,
    snapshot_times: &[f64],
) -> Result<ForwardRun> {
    let torus = xi0.torus();
    let n = torus.sites();
    let bound = model.direct_rate_bound();
    let total = bound * n as f64;
    let mut s = Stream::new(seed, &[kind::DIRECT]);
    let mut cfg = xi0.clone();
    let mut counts = LocalCounts::new(&model.kernel, &cfg);
    let mut snaps = Snapshots { times: snapshot_times, next: 0, out: Vec::new() };
    let mut t = 0.0;
    let mut events = 0u64;
    if total > 0.0 {
        loop {
            t += s.exp(total);
            if t > horizon {
                break;
            }
            snaps.before(t, &cfg);
            let x = s.below(n);
            let u = s.uniform();
            let r = counts.rate(model, &cfg, x)?;
            debug_assert!(r <= bound * (1.0 + 1e-12), "rate {r} above bound {bound}");
            if u * bound < r {
                cfg.flip(x);
                counts.flipped(&model.kernel, x, cfg.get(x));
                events += 1;
            }
        }
    }
    snaps.before(f64::INFINITY, &cfg);
    Ok(ForwardRun { config: cfg, snapshots: snaps.out, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::nn_kernel;
    use crate::model::{build_evolution_game, build_lv, build_voter, GameParams};

    #[test]
    fn empty_log_at_zero_horizon() {
        let m = build_lv(-1.0, -1.0, 0.25, &nn_kernel(2)).unwrap();
        let t = m.torus(5).unwrap();
        let log = gen_log(&m, &t, 0.0, 1).unwrap();
        assert_eq!(log.event_count(), 0);
    }

    #[test]
    fn logs_are_reproducible_and_ordered() {
        let m = build_lv(-1.0, -1.0, 0.25, &nn_kernel(2)).unwrap();
        let t = m.torus(5).unwrap();
        let a = gen_log(&m, &t, 1.0, 9).unwrap();
        let b = gen_log(&m, &t, 1.0, 9).unwrap();
        assert_eq!(a, b);
        for s in &a.sites {
            assert!(s.voter.windows(2).all(|w| w[0].t < w[1].t));
            assert!(s.reaction.windows(2).all(|w| w[0].t < w[1].t));
        }
        let c = gen_log(&m, &t, 1.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn voter_event_counts_are_poisson() {
        // 10^4 sites, rate voter_rate, horizon 1
        let m = build_voter(0.5, &nn_kernel(2)).unwrap();
        let t = Torus::new(2, 100);
        let log = gen_log(&m, &t, 1.0, 3).unwrap();
        let n = t.sites() as f64;
        let mean = log.sites.iter().map(|s| s.voter.len()).sum::<usize>() as f64 / n;
        let rate = m.voter_rate;
        assert!((mean - rate).abs() < 4.0 * libm::sqrt(rate / n), "mean {mean}");
    }

    #[test]
    fn lazy_run_equals_log_replay() {
        let m = build_lv(-1.0, 0.5, 0.25, &nn_kernel(3)).unwrap();
        let t = m.torus(6).unwrap();
        for seed in 0..20 {
            let xi0 = Configuration::bernoulli(&t, 0.4, seed + 100);
            let log = gen_log(&m, &t, 1.0, seed).unwrap();
            let a = replay_log(&m, &xi0, &log, 1.0).unwrap();
            let b = simulate_forward(&m, &xi0, 1.0, seed, Backend::Graphical, &[]).unwrap();
            assert_eq!(a, b.config);
            assert_eq!(b.events as usize, log.event_count());
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let m = build_lv(-1.0, -1.0, 0.25, &nn_kernel(3)).unwrap();
        let t = m.torus(6).unwrap();
        let xi0 = Configuration::bernoulli(&t, 0.5, 1);
        for b in [Backend::Graphical, Backend::Direct] {
            let r1 = simulate_forward(&m, &xi0, 0.5, 4, b, &[0.25]).unwrap();
            let r2 = simulate_forward(&m, &xi0, 0.5, 4, b, &[0.25]).unwrap();
            assert_eq!(r1, r2);
            assert_eq!(r1.snapshots.len(), 1);
        }
    }

    #[test]
    fn absorbing_states() {
        let k = nn_kernel(3);
        let v = build_voter(0.25, &k).unwrap();
        let lv = build_lv(-1.0, 0.5, 0.25, &k).unwrap();
        let t = v.torus(6).unwrap();
        for seed in 0..100 {
            let ones = Configuration::ones(&t);
            let r = simulate_forward(&v, &ones, 1.0, seed, Backend::Graphical, &[]).unwrap();
            assert_eq!(r.config, ones);
            let zeros = Configuration::zeros(&t);
            assert!(lv.perturbation.as_ref().unwrap().staydead());
            for b in [Backend::Graphical, Backend::Direct] {
                let r = simulate_forward(&lv, &zeros, 1.0, seed, b, &[]).unwrap();
                assert_eq!(r.config, zeros);
            }
        }
    }

    #[test]
    fn torus_guard() {
        let m = build_lv(-1.0, -1.0, 0.25, &nn_kernel(1)).unwrap();
        let t = Torus::new(1, 2);
        let xi0 = Configuration::zeros(&t);
        assert!(matches!(
            simulate_forward(&m, &xi0, 1.0, 0, Backend::Graphical, &[]),
            Err(Error::TorusTooSmall { .. })
        ));
    }

    #[test]
    fn voter_density_is_a_martingale() {
        let m = build_voter(0.25, &nn_kernel(3)).unwrap();
        let t = m.torus(6).unwrap();
        let runs = 500;
        let v = 0.3;
        let mut xs = Vec::with_capacity(runs);
        for r in 0..runs as u64 {
            let xi0 = Configuration::bernoulli(&t, v, 10_000 + r);
            let out = simulate_forward(&m, &xi0, 1.0, r, Backend::Graphical, &[]).unwrap();
            xs.push(out.config.density());
        }
        let mean = xs.iter().sum::<f64>() / runs as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (runs as f64 - 1.0);
        assert!((mean - v).abs() < 4.0 * libm::sqrt(var / runs as f64), "mean {mean}");
    }

    #[test]
    fn lv_without_selection_matches_voter_in_law() {
        // theta = 0: reactions replace part of the voter rate, same law
        let k = nn_kernel(3);
        let lv = build_lv(0.0, 0.0, 0.25, &k).unwrap();
        let v = build_voter(0.25, &k).unwrap();
        let t = lv.torus(6).unwrap();
        let runs = 300u64;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for r in 0..runs {
            let xi0 = Configuration::bernoulli(&t, 0.3, 50_000 + r);
            // the voter-model correlation observable: number of disagreeing edges
            let pa = simulate_forward(&lv, &xi0, 0.5, r, Backend::Graphical, &[]).unwrap().config;
            let pb = simulate_forward(&v, &xi0, 0.5, r + runs, Backend::Graphical, &[]).unwrap().config;
            let dis = |c: &Configuration| {
                (0..t.sites()).filter(|&x| c.get(x) != c.get(t.shift(x, &[1, 0, 0]))).count() as f64
            };
            a.push(dis(&pa));
            b.push(dis(&pb));
        }
        let stats = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0);
            (m, v / xs.len() as f64)
        };
        let (ma, va) = stats(&a);
        let (mb, vb) = stats(&b);
        assert!((ma - mb).abs() < 4.0 * libm::sqrt(va + vb), "{ma} vs {mb}");
    }

    #[test]
    fn cached_rates_match_closed_form() {
        let k = nn_kernel(3);
        let models = [
            build_voter(0.25, &k).unwrap(),
            build_lv(-1.0, 0.5, 0.25, &k).unwrap(),
            build_evolution_game(GameParams::cooperation(7.0, 1.0, 0.002), &k).unwrap(),
        ];
        let t = Torus::new(3, 7);
        for m in &models {
            let mut cfg = Configuration::bernoulli(&t, 0.4, 8);
            let mut c = LocalCounts::new(&m.kernel, &cfg);
            let mut s = Stream::new(2, &[0]);
            for _ in 0..2000 {
                let x = s.below(t.sites());
                assert_eq!(c.rate(m, &cfg, x).unwrap(), m.direct_rate(&cfg, x).unwrap());
                cfg.flip(x);
                c.flipped(&m.kernel, x, cfg.get(x));
            }
        }
    }

    #[test]
    fn queue_orders_like_a_heap() {
        let mut s = Stream::new(5, &[0]);
        let mut q = EventQueue::new(100.0, 50);
        let mut h = BinaryHeap::new();
        let mut now = 0.0f64;
        for i in 0..50usize {
            let k = key(s.exp(2.0), i, 0);
            q.push(k);
            h.push(Reverse(k));
        }
        for _ in 0..20_000 {
            let a = q.pop().unwrap();
            let Reverse(b) = h.pop().unwrap();
            assert_eq!(a, b);
            let t = f64::from_bits((a >> 64) as u64);
            assert!(t >= now);
            now = t;
            // mostly near-future, sometimes far
            let dt = if s.bernoulli(0.05) { s.exp(0.01) } else { s.exp(2.0) };
            let (x, _) = unkey(a);
            let k = key(t + dt, x, 0);
            q.push(k);
            h.push(Reverse(k));
        }
    }

    #[test]
    fn direct_and_graphical_agree_in_mean() {
        // LV(-1,-1), eps = 1/8, 16^3 torus, v = 0.5: mean density at t = 1
        let m = build_lv(-1.0, -1.0, 0.125, &nn_kernel(3)).unwrap();
        let t = m.torus(16).unwrap();
        let pairs = 200u64;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for r in 0..pairs {
            let xi0 = Configuration::bernoulli(&t, 0.5, 1_000 + r);
            a.push(simulate_forward(&m, &xi0, 1.0, r, Backend::Graphical, &[]).unwrap().config.density());
            let xi0 = Configuration::bernoulli(&t, 0.5, 2_000 + r);
            b.push(simulate_forward(&m, &xi0, 1.0, r, Backend::Direct, &[]).unwrap().config.density());
        }
        let stats = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0);
            (m, v / xs.len() as f64)
        };
        let (ma, va) = stats(&a);
        let (mb, vb) = stats(&b);
        assert!((ma - mb).abs() < 3.0 * libm::sqrt(va + vb), "{ma} vs {mb}");
    }
}
