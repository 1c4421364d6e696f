//! Backward coalescing branching walk on a forward event log, the
//! computation process that evaluates it, and the branching Brownian motion
//! estimator of the limiting PDE.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::engine::{reaction_flips, EventLog};
use crate::error::{Error, Result};
use crate::lattice::{Configuration, Torus};
use crate::model::{ModelSpec, PerturbationSpec};
use crate::rng::{kind, Stream};

pub use crate::coalesce::{estimate_nu0, PartitionLaw};

/// One step of the dual, in the order the dual meets them (decreasing
/// forward time).
#[derive(Clone, Debug, PartialEq)]
pub enum DualRecord {
    Coalesce { t: f64, absorbed: u32, survivor: u32 },
    /// Children are `first_child..first_child + n0`.
    Branch { t: f64, parent: u32, first_child: u32, u: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    pub starts: Vec<usize>,
    pub horizon: f64,
    pub n0: usize,
    pub records: Vec<DualRecord>,
    /// Site of each particle at forward time 0, or where it was absorbed.
    pub positions: Vec<usize>,
    pub live: Vec<bool>,
}

impl DualState {
    /// Total number of particle indices ever created.
    pub fn particle_count(&self) -> usize {
        self.positions.len()
    }

    pub fn branch_times(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match r {
                DualRecord::Branch { t, .. } => Some(*t),
                _ => None,
            })
            .collect()
    }

    /// Indices existing by dual depth `depth` (forward time T - depth).
    pub fn particles_at(&self, depth: f64) -> usize {
        let s = self.horizon - depth;
        self.starts.len() + self.branch_times().iter().filter(|&&t| t >= s).count() * self.n0
    }

    /// Size of the live set J at dual depth `depth`.
    pub fn live_at(&self, depth: f64) -> usize {
        let s = self.horizon - depth;
        let mut n = self.starts.len() as i64;
        for r in &self.records {
            match *r {
                DualRecord::Coalesce { t, .. } if t >= s => n -= 1,
                DualRecord::Branch { t, .. } if t >= s => n += self.n0 as i64,
                _ => {}
            }
        }
        n as usize
    }

    /// Live particles at forward time 0 as (index, site), by index.
    pub fn leaves(&self) -> Vec<(usize, usize)> {
        (0..self.positions.len()).filter(|&i| self.live[i]).map(|i| (i, self.positions[i])).collect()
    }
}

#[inline]
fn key(t: f64, site: usize, kd: u64) -> u128 {
    ((t.to_bits() as u128) << 64) | ((site as u128) << 1) | kd as u128
}

/// Latest event at `site` strictly before `before` (or at most `before`
/// when `inclusive`), as (key, index within its list).
fn prev_event(log: &EventLog, site: usize, before: f64, inclusive: bool) -> Option<(u128, u32)> {
    let sl = &log.sites[site];
    let cut = |t: f64| if inclusive { t <= before } else { t < before };
    let iv = sl.voter.partition_point(|e| cut(e.t));
    let ir = sl.reaction.partition_point(|e| cut(e.t));
    let v = iv.checked_sub(1).map(|i| (key(sl.voter[i].t, site, 0), i as u32));
    let r = ir.checked_sub(1).map(|i| (key(sl.reaction[i].t, site, 1), i as u32));
    match (v, r) {
        (Some(a), Some(b)) => Some(if a.0 > b.0 { a } else { b }),
        (a, b) => a.or(b),
    }
}

/// Run the dual from sites `z` at forward time `t` back to time 0.
pub fn run_dual(model: &ModelSpec, torus: &Torus, log: &EventLog, z: &[usize], t: f64) -> Result<DualState> {
    if t > log.horizon {
        return Err(Error::HorizonExceeded { requested: t, horizon: log.horizon });
    }
    let n = torus.sites();
    if log.sites.len() != n {
        return Err(Error::TableSize { expected: n, got: log.sites.len() });
    }
    if let Some(&bad) = z.iter().find(|&&s| s >= n) {
        return Err(Error::SiteOutOfRange { site: bad, sites: n });
    }
    let n0 = model.perturbation.as_ref().map_or(0, |p| p.n0());
    let d = torus.dim();
    let k = &model.kernel;

    let mut occ = vec![u32::MAX; n];
    let mut positions: Vec<usize> = Vec::new();
    let mut live: Vec<bool> = Vec::new();
    let mut sched: Vec<u128> = Vec::new();
    let mut records = Vec::new();
    let mut heap: BinaryHeap<(u128, u32, u32)> = BinaryHeap::new();

    let schedule = |heap: &mut BinaryHeap<(u128, u32, u32)>, sched: &mut Vec<u128>, i: u32, site: usize, before: f64, incl: bool| {
        match prev_event(log, site, before, incl) {
            Some((kk, idx)) => {
                sched[i as usize] = kk;
                heap.push((kk, i, idx));
            }
            None => sched[i as usize] = u128::MAX,
        }
    };

    for (i, &site) in z.iter().enumerate() {
        positions.push(site);
        sched.push(u128::MAX);
        if occ[site] != u32::MAX {
            live.push(false);
            records.push(DualRecord::Coalesce { t, absorbed: i as u32, survivor: occ[site] });
        } else {
            live.push(true);
            occ[site] = i as u32;
            schedule(&mut heap, &mut sched, i as u32, site, t, true);
        }
    }

    while let Some((kk, i, idx)) = heap.pop() {
        let iu = i as usize;
        if !live[iu] || sched[iu] != kk {
            continue;
        }
        let te = f64::from_bits((kk >> 64) as u64);
        let x = positions[iu];
        if kk & 1 == 0 {
            let step = log.sites[x].voter[idx as usize].step as usize;
            let y = torus.shift(x, k.offset(step));
            occ[x] = u32::MAX;
            let j = occ[y];
            if j == u32::MAX {
                positions[iu] = y;
                occ[y] = i;
                schedule(&mut heap, &mut sched, i, y, te, false);
            } else {
                let (surv, abs) = if i < j { (i, j) } else { (j, i) };
                records.push(DualRecord::Coalesce { t: te, absorbed: abs, survivor: surv });
                live[abs as usize] = false;
                positions[iu] = y;
                occ[y] = surv;
                if surv == i {
                    // the resident's pending event at y is now ours
                    schedule(&mut heap, &mut sched, i, y, te, false);
                }
            }
        } else {
            let ev = &log.sites[x].reaction[idx as usize];
            let first = positions.len() as u32;
            records.push(DualRecord::Branch { t: te, parent: i, first_child: first, u: ev.u });
            for c in 0..n0 {
                let ci = first + c as u32;
                let y = torus.shift(x, &ev.ys[c * d..(c + 1) * d]);
                positions.push(y);
                sched.push(u128::MAX);
                let j = occ[y];
                if j == u32::MAX {
                    live.push(true);
                    occ[y] = ci;
                    schedule(&mut heap, &mut sched, ci, y, te, false);
                } else {
                    live.push(false);
                    records.push(DualRecord::Coalesce { t: te, absorbed: ci, survivor: j });
                }
            }
            schedule(&mut heap, &mut sched, i, x, te, false);
        }
    }
    Ok(DualState { starts: z.to_vec(), horizon: t, n0, records, positions, live })
}

/// Evaluate the computation process from leaf values (one per entry of
/// [`DualState::leaves`], in that order) to values at the starts.
pub fn compute(dual: &DualState, inputs: &[u8], p: &PerturbationSpec) -> Result<Vec<u8>> {
    let leaves = dual.leaves();
    if inputs.len() < leaves.len() {
        return Err(Error::MissingInput(leaves[inputs.len()].0));
    }
    let mut val = vec![0u8; dual.particle_count()];
    for (&(i, _), &v) in leaves.iter().zip(inputs) {
        val[i] = v;
    }
    for r in dual.records.iter().rev() {
        match *r {
            DualRecord::Coalesce { absorbed, survivor, .. } => val[absorbed as usize] = val[survivor as usize],
            DualRecord::Branch { parent, first_child, u, .. } => {
                let mut eta = 0usize;
                for c in 0..dual.n0 {
                    eta |= (val[first_child as usize + c] as usize) << c;
                }
                let cur = val[parent as usize];
                if reaction_flips(p, cur, eta, u) {
                    val[parent as usize] = 1 - cur;
                }
            }
        }
    }
    Ok(val[..dual.starts.len()].to_vec())
}

/// [`compute`] with leaf inputs read from an initial configuration.
pub fn compute_from(dual: &DualState, xi0: &Configuration, p: &PerturbationSpec) -> Result<Vec<u8>> {
    let inputs: Vec<u8> = dual.leaves().iter().map(|&(_, s)| xi0.get(s)).collect();
    compute(dual, &inputs, p)
}

// ---- branching Brownian motion ----

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BbmEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
}

/// Inputs of the branching Brownian motion computation process.
pub struct Bbm<'a> {
    pub g0: &'a [f64],
    pub g1: &'a [f64],
    pub cstar: f64,
    pub law: &'a PartitionLaw,
    pub sigma2: f64,
    pub v: &'a (dyn Fn(&[f64]) -> f64 + Sync),
}

struct BbmRun<'a, 'b> {
    bbm: &'b Bbm<'a>,
    sampler: crate::coalesce::PartitionSampler,
    s: Stream,
}

impl BbmRun<'_, '_> {
    fn gauss_step(&mut self, x: &mut [f64], dt: f64) {
        let sd = libm::sqrt(self.bbm.sigma2 * dt);
        for c in x.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.s);
            *c += sd * z;
        }
    }

    /// P(value = 1) of a particle at `x` with `tau` forward time left to run.
    fn eval(&mut self, x: &[f64], tau: f64) -> f64 {
        let mut pos = x.to_vec();
        if tau <= 0.0 {
            return (self.bbm.v)(&pos);
        }
        let e = self.s.exp(self.bbm.cstar);
        if e >= tau {
            self.gauss_step(&mut pos, tau);
            return (self.bbm.v)(&pos);
        }
        self.gauss_step(&mut pos, e);
        let rest = tau - e;
        let labels = self.sampler.sample(&mut self.s).to_vec();
        // block 0 is the parent; other blocks are new particles at pos
        let mut block_of = vec![0usize; labels.len()];
        let mut heads: Vec<u8> = vec![0];
        for (j, &l) in labels.iter().enumerate() {
            block_of[j] = match heads.iter().position(|&h| h == l) {
                Some(b) => b,
                None => {
                    heads.push(l);
                    heads.len() - 1
                }
            };
        }
        let probs: Vec<f64> = (0..heads.len()).map(|_| self.eval(&pos, rest)).collect();
        let (g0, g1, c) = (self.bbm.g0, self.bbm.g1, self.bbm.cstar);
        let mut out = 0.0;
        for w in 0..(1usize << heads.len()) {
            let mut pw = 1.0;
            for (b, &pb) in probs.iter().enumerate() {
                pw *= if w >> b & 1 == 1 { pb } else { 1.0 - pb };
            }
            if pw == 0.0 {
                continue;
            }
            let mut eta = 0usize;
            for j in 1..labels.len() {
                eta |= (w >> block_of[j] & 1) << (j - 1);
            }
            out += pw * if w & 1 == 1 { 1.0 - g0[eta] / c } else { g1[eta] / c };
        }
        out
    }
}

/// Mean over `n` trees of P(root value = 1); each tree is conditioned on its
/// branching and motion, with the Bernoulli inputs and flip uniforms
/// integrated out exactly.
pub fn bbm_estimate_u(bbm: &Bbm, t: f64, x: &[f64], n: u64, seed: u64) -> BbmEstimate {
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in 0..n {
        let mut run = BbmRun { bbm, sampler: bbm.law.sampler(), s: Stream::new(seed, &[kind::BBM, i]) };
        let y = run.eval(x, t);
        m1 += y;
        m2 += y * y;
    }
    let nf = n as f64;
    let mean = m1 / nf;
    let var = (m2 / nf - mean * mean).max(0.0);
    BbmEstimate { value: mean, stderr: libm::sqrt(var / nf), n }
}

/// Sums of the per-tree values and their squares over `range`, for
/// splitting a run across workers.
pub fn bbm_sums(bbm: &Bbm, t: f64, x: &[f64], seed: u64, range: core::ops::Range<u64>) -> (f64, f64) {
    let sampler = bbm.law.sampler();
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in range {
        let mut run = BbmRun { bbm, sampler: sampler.clone(), s: Stream::new(seed, &[kind::BBM, i]) };
        let y = run.eval(x, t);
        m1 += y;
        m2 += y * y;
    }
    (m1, m2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{gen_log, simulate_forward};
    use crate::kernel::{nn_kernel, OffspringLaw};
    use crate::model::{build_lv, build_voter, Backend, Family};
    use proptest::prelude::*;

    fn lv_setup() -> (ModelSpec, Torus) {
        let k = nn_kernel(3);
        let m = build_lv(-1.0, -1.0, 0.25, &k).unwrap();
        let t = m.torus(6).unwrap();
        (m, t)
    }

    #[test]
    fn empty_log_keeps_particles() {
        let (m, torus) = lv_setup();
        let log = gen_log(&m, &torus, 0.0, 1).unwrap();
        let d = run_dual(&m, &torus, &log, &[3, 7, 3], 0.0).unwrap();
        assert_eq!(d.leaves(), vec![(0, 3), (1, 7)]);
        let out = compute(&d, &[1, 0], m.perturbation.as_ref().unwrap()).unwrap();
        assert_eq!(out, vec![1, 0, 1]);
        assert_eq!(compute(&d, &[1], m.perturbation.as_ref().unwrap()), Err(Error::MissingInput(1)));
    }

    #[test]
    fn guards() {
        let (m, torus) = lv_setup();
        let log = gen_log(&m, &torus, 0.5, 1).unwrap();
        assert!(matches!(run_dual(&m, &torus, &log, &[0], 1.0), Err(Error::HorizonExceeded { .. })));
        assert!(matches!(run_dual(&m, &torus, &log, &[216], 0.5), Err(Error::SiteOutOfRange { .. })));
    }

    #[test]
    fn voter_dual_coalesces_after_meeting() {
        let k = nn_kernel(3);
        let m = build_voter(0.25, &k).unwrap();
        let torus = m.torus(6).unwrap();
        let mut met = 0;
        for seed in 0..50 {
            let mut log = gen_log(&m, &torus, 5.0, seed).unwrap();
            log.sites.iter_mut().for_each(|s| s.reaction.clear());
            let d = run_dual(&m, &torus, &log, &[0, 1], 5.0).unwrap();
            assert_eq!(d.particle_count(), 2);
            let c = d.records.len();
            assert!(c <= 1);
            assert_eq!(d.leaves().len(), 2 - c);
            met += c;
        }
        assert!(met > 25);
    }

    #[test]
    fn duality_is_exact() {
        let (m, torus) = lv_setup();
        let p = m.perturbation.as_ref().unwrap();
        let mut pick = Stream::new(77, &[0]);
        for trial in 0..200u64 {
            let seed = 1000 + trial;
            let z = pick.below(torus.sites());
            let xi0 = Configuration::bernoulli(&torus, 0.5, seed ^ 0x55);
            let fwd = simulate_forward(&m, &xi0, 1.0, seed, Backend::Graphical, &[]).unwrap();
            let log = gen_log(&m, &torus, 1.0, seed).unwrap();
            let d = run_dual(&m, &torus, &log, &[z], 1.0).unwrap();
            assert_eq!(compute_from(&d, &xi0, p).unwrap()[0], fwd.config.get(z), "trial {trial}");
        }
    }

    #[test]
    fn duality_for_many_starts_at_once() {
        let (m, torus) = lv_setup();
        let p = m.perturbation.as_ref().unwrap();
        let xi0 = Configuration::bernoulli(&torus, 0.3, 5);
        let fwd = simulate_forward(&m, &xi0, 0.7, 9, Backend::Graphical, &[]).unwrap();
        let log = gen_log(&m, &torus, 1.0, 9).unwrap();
        let all: Vec<usize> = (0..torus.sites()).collect();
        let d = run_dual(&m, &torus, &log, &all, 0.7).unwrap();
        let out = compute_from(&d, &xi0, p).unwrap();
        for z in all {
            assert_eq!(out[z], fwd.config.get(z));
        }
    }

    #[test]
    fn particle_count_after_m_reactions() {
        let (m, torus) = lv_setup();
        for seed in 0..1000u64 {
            let log = gen_log(&m, &torus, 0.3, seed).unwrap();
            let z = [(seed % 216) as usize, ((seed * 7) % 216) as usize];
            let d = run_dual(&m, &torus, &log, &z, 0.3).unwrap();
            let branches = d.branch_times().len();
            assert_eq!(d.particle_count(), z.len() + branches * 2);
            assert_eq!(d.particles_at(0.3), d.particle_count());
            for depth in [0.0, 0.1, 0.2] {
                assert!(d.live_at(depth) <= d.particles_at(depth));
            }
        }
    }

    #[test]
    fn all_zero_inputs_stay_zero() {
        let (m, torus) = lv_setup();
        let p = m.perturbation.as_ref().unwrap();
        assert!(p.staydead());
        let log = gen_log(&m, &torus, 1.0, 3).unwrap();
        let d = run_dual(&m, &torus, &log, &[0, 50, 100], 1.0).unwrap();
        let zeros = vec![0u8; d.leaves().len()];
        assert_eq!(compute(&d, &zeros, p).unwrap(), vec![0, 0, 0]);
    }

    /// Mean population at time t of a pure branching process where each
    /// particle splits into n0 + 1 at rate c.
    fn branching_oracle(m0: usize, c: f64, n0: usize, t: f64, n: u64, seed: u64) -> (f64, f64) {
        let mut s = Stream::new(seed, &[123]);
        let (mut a, mut b) = (0.0, 0.0);
        for _ in 0..n {
            let mut clocks: Vec<f64> = (0..m0).map(|_| 0.0).collect();
            let mut count = 0usize;
            while let Some(t0) = clocks.pop() {
                let tb = t0 + s.exp(c);
                if tb > t {
                    count += 1;
                } else {
                    for _ in 0..=n0 {
                        clocks.push(tb);
                    }
                }
            }
            a += count as f64;
            b += (count * count) as f64;
        }
        let mean = a / n as f64;
        (mean, libm::sqrt((b / n as f64 - mean * mean) / n as f64))
    }

    #[test]
    fn live_set_grows_no_faster_than_branching() {
        let k = nn_kernel(3);
        let m = build_lv(-1.0, -1.0, 0.25, &k).unwrap();
        let torus = m.torus(12).unwrap();
        let p = m.perturbation.as_ref().unwrap();
        let t = 0.2;
        let n = 400;
        let (mut a, mut b) = (0.0, 0.0);
        for seed in 0..n {
            let log = gen_log(&m, &torus, t, seed).unwrap();
            let d = run_dual(&m, &torus, &log, &[0, 1], t).unwrap();
            let j = d.live_at(t) as f64;
            a += j;
            b += j * j;
        }
        let mean = a / n as f64;
        let se = libm::sqrt((b / n as f64 - mean * mean) / n as f64);
        let (om, ose) = branching_oracle(2, p.cstar, p.n0(), t, 4000, 1);
        let bound = 2.0 * libm::exp(p.cstar * p.n0() as f64 * t);
        assert!((om - bound).abs() < 4.0 * ose, "oracle {om} vs {bound}");
        assert!(mean <= om + 4.0 * libm::sqrt(se * se + ose * ose), "{mean} vs {om}");
    }

    #[test]
    fn monotone_tables_give_monotone_outputs() {
        // both flip rules use U from below, so monotonicity needs g1 and g0
        // monotone and g1(eta) > 0 to force g0 = 0 above eta
        let k = nn_kernel(2);
        let q = OffspringLaw::Independent { kernel: k.clone(), n0: 2 };
        let g1 = vec![0.0, 0.5, 0.5, 1.5];
        let g0 = vec![1.5, 0.0, 0.0, 0.0];
        let mut m = build_voter(0.25, &k).unwrap();
        m.perturbation = Some(PerturbationSpec::new(q, g0, g1, None).unwrap());
        m.family = Family::Custom;
        let torus = m.torus(8).unwrap();
        let p = m.perturbation.as_ref().unwrap();
        let mut s = Stream::new(4, &[0]);
        for seed in 0..100 {
            let log = gen_log(&m, &torus, 1.0, seed).unwrap();
            let d = run_dual(&m, &torus, &log, &[0, 9, 30], 1.0).unwrap();
            let nl = d.leaves().len();
            let lo: Vec<u8> = (0..nl).map(|_| s.below(2) as u8).collect();
            let hi: Vec<u8> = lo.iter().map(|&v| v | s.below(2) as u8).collect();
            let (a, b) = (compute(&d, &lo, p).unwrap(), compute(&d, &hi, p).unwrap());
            assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
        }
    }

    fn point_law(labels: &[u8]) -> PartitionLaw {
        let mut law = PartitionLaw { n0: labels.len() - 1, n: 1, cutoff: 1.0, ..Default::default() };
        law.counts.insert(labels.to_vec(), 1);
        law
    }

    #[test]
    fn bbm_at_time_zero_is_the_profile() {
        let law = point_law(&[0, 1, 2]);
        let v = |x: &[f64]| 0.25 + 0.5 * (x[0] > 0.0) as u8 as f64;
        let bbm = Bbm { g0: &[0.0; 4], g1: &[1.0; 4], cstar: 3.0, law: &law, sigma2: 1.0, v: &v };
        let e = bbm_estimate_u(&bbm, 0.0, &[0.3], 10, 1);
        assert_eq!((e.value, e.stderr), (0.75, 0.0));
    }

    #[test]
    fn bbm_without_reactions_is_the_heat_kernel() {
        let law = point_law(&[0, 1, 1]);
        let v = |x: &[f64]| if x[0] > 0.0 { 1.0 } else { 0.0 };
        let bbm = Bbm { g0: &[0.0; 4], g1: &[0.0; 4], cstar: 1.0, law: &law, sigma2: 2.0, v: &v };
        let e = bbm_estimate_u(&bbm, 0.5, &[0.4], 20_000, 3);
        // P(0.4 + N(0, 1) > 0)
        let exact = 0.5 * libm::erfc(-0.4 / core::f64::consts::SQRT_2);
        assert!((e.value - exact).abs() < 3.0 * e.stderr, "{e:?} vs {exact}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn duality_on_random_seeds(seed in any::<u64>(), z in 0usize..216, t in 0.05f64..1.0) {
            let (m, torus) = lv_setup();
            let p = m.perturbation.as_ref().unwrap();
            let xi0 = Configuration::bernoulli(&torus, 0.5, seed.wrapping_add(1));
            let fwd = simulate_forward(&m, &xi0, t, seed, Backend::Graphical, &[]).unwrap();
            let log = gen_log(&m, &torus, t, seed).unwrap();
            let d = run_dual(&m, &torus, &log, &[z], t).unwrap();
            prop_assert_eq!(compute_from(&d, &xi0, p).unwrap()[0], fwd.config.get(z));
        }
    }
}
