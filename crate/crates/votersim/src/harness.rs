//! Particle-system experiments checked against the limiting equation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use votersim_core::coalesce::{estimate_nu0, p2_p3, pattern_tally, reaction_poly_mc, PatternQuery};
use votersim_core::dual::{compute_from, run_dual};
use votersim_core::engine::{gen_log, simulate_forward, Configuration, Torus};
use votersim_core::kernel::independent_pair_law;
use votersim_core::model::{Backend, Family, ModelSpec};
use votersim_core::pde::{solve_ode_path, solve_rd_1d, Grid1D};
use votersim_core::reaction::{coop_f, lv_f, Provenance, ReactionPolynomial};
use votersim_core::rng::{derive_key, kind};

use crate::config::Config;
use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MAX_SITES: usize = 1 << 27;

/// Torus for a model at the configured physical side.
pub fn torus_for(model: &ModelSpec, side: f64, fixed: Option<usize>) -> Result<Torus> {
    let m = fixed.unwrap_or_else(|| (side / model.epsilon).round().max(1.0) as usize);
    let sites = m.checked_pow(model.dim() as u32).unwrap_or(usize::MAX);
    if sites > MAX_SITES {
        return Err(HarnessError::TooLarge { sites });
    }
    Ok(model.torus(m)?)
}

/// Smallest divisor of `side` at least ceil(eps^(r-1)).
pub fn block_side(eps: f64, r: f64, side: usize) -> usize {
    let target = (eps.powf(r - 1.0) - 1e-9).ceil().max(1.0) as usize;
    (target.min(side)..=side).find(|a| side % a == 0).unwrap_or(side)
}

/// The reaction term used as reference, with the coalescence inputs it needed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReaction {
    pub coefficients: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    pub source: String,
    pub inputs: Vec<(String, f64)>,
}

impl ReferenceReaction {
    pub fn poly(&self) -> ReactionPolynomial {
        ReactionPolynomial::from_f64(&self.coefficients, Provenance::Inline)
    }
}

fn coalesce_prob(text: &str, model: &ModelSpec, cutoff: f64, n: u64, seed: u64, tag: u64) -> Result<f64> {
    let q = PatternQuery::parse(text, model.dim())?;
    let t = pattern_tally(&q, &model.kernel, None, &[cutoff], seed, tag, 0..n)?;
    Ok(t.count(0) as f64 / n as f64)
}

pub fn reference_reaction(model: &ModelSpec, cfg: &Config) -> Result<ReferenceReaction> {
    let ex = &cfg.experiment;
    let seed = derive_key(ex.seed, &[kind::WALK]);
    let (cut, n) = (ex.cutoff, ex.coalesce_n);
    let closed = ex.reference == "closed";
    let out = |f: &ReactionPolynomial, source: &str, inputs: Vec<(String, f64)>| {
        let len = f.degree().map_or(1, |d| d + 1);
        ReferenceReaction { coefficients: f.coeffs_f64(len), stderr: f.stderr.clone(), source: source.into(), inputs }
    };
    match (&model.family, closed) {
        (Family::Voter, _) => Ok(out(&ReactionPolynomial::zero(), "voter", vec![])),
        (Family::Lv { theta0, theta1 }, true) => {
            let law = estimate_nu0(&independent_pair_law(&model.kernel), &model.kernel, cut, n, seed);
            let (p2, p3) = p2_p3(&law);
            Ok(out(&lv_f(*theta0, *theta1, p2, p3), "lv closed form", vec![("p2".into(), p2), ("p3".into(), p3)]))
        }
        (Family::Game(gp), _) => {
            let p01 = coalesce_prob("0|e1", model, cut, n, seed, 0)?;
            let p122 = coalesce_prob("e1|e2,e2+e3", model, cut, n, seed, 1)?;
            let p123 = coalesce_prob("e1|e2|e2+e3", model, cut, n, seed, 2)?;
            let f = coop_f(gp, model.kernel.len(), p01, p122, p123);
            Ok(out(&f, "game closed form", vec![("p01".into(), p01), ("p122".into(), p122), ("p123".into(), p123)]))
        }
        _ => {
            let p = model.perturbation.as_ref().ok_or_else(|| HarnessError::Config("no g-form for a Monte Carlo reference".into()))?;
            let (f, _) = reaction_poly_mc(p, model.eps1_inv2, &model.kernel, cut, n, seed);
            Ok(out(&f, "monte carlo", vec![]))
        }
    }
}

/// Initial density at physical coordinate x1.
fn profile(v: f64, amp: f64, side: f64) -> impl Fn(f64) -> f64 {
    move |x| (v + amp * (2.0 * std::f64::consts::PI * x / side).cos()).clamp(0.0, 1.0)
}

/// Reference values at `times` at the physical first coordinates `xs`.
fn reference_values(f: &ReactionPolynomial, model: &ModelSpec, cfg: &Config, times: &[f64], xs: &[f64]) -> Result<Vec<Vec<f64>>> {
    let ex = &cfg.experiment;
    if ex.amplitude == 0.0 {
        let path = solve_ode_path(f, ex.v, times, cfg.grid.ode_dt)?;
        return Ok(path.into_iter().map(|u| vec![u; xs.len()]).collect());
    }
    // the cosine profile is even about 0 and side/2, so zero flux on the half period
    let sigma2 = cfg.grid.sigma2.unwrap_or_else(|| model.kernel.sigma2());
    let half = ex.side / 2.0;
    let grid = Grid1D::new(0.0, half, cfg.grid.dx, sigma2);
    let v = profile(ex.v, ex.amplitude, ex.side);
    let mut u: Vec<f64> = (0..grid.cells()).map(|i| v(grid.x(i))).collect();
    let mut t0 = 0.0;
    let mut out = Vec::new();
    for &t in times {
        u = solve_rd_1d(f, &u, t - t0, &grid, None)?.u;
        t0 = t;
        let at = |x: f64| {
            let x = x.rem_euclid(ex.side);
            let x = if x > half { ex.side - x } else { x };
            let pos = ((x - grid.x_min) / grid.dx - 0.5).clamp(0.0, (u.len() - 1) as f64);
            let i = (pos.floor() as usize).min(u.len() - 2);
            let fr = pos - i as f64;
            u[i] * (1.0 - fr) + u[i + 1] * fr
        };
        out.push(xs.iter().map(|&x| at(x)).collect());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HydroPoint {
    pub epsilon: f64,
    pub t: f64,
    pub torus_side: usize,
    pub block_sites: usize,
    pub replicates: usize,
    pub mean_density: f64,
    pub stderr: f64,
    pub reference: f64,
    /// |mean density - reference| for the spatial average.
    pub discrepancy: f64,
    /// Over blocks, of the replicate-averaged block density.
    pub sup_err: f64,
    pub l2_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HydroRow {
    pub epsilon: f64,
    pub t: f64,
    pub block: Vec<usize>,
    pub empirical: f64,
    pub reference: f64,
    pub abs_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HydroReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config: Config,
    pub reaction: ReferenceReaction,
    pub points: Vec<HydroPoint>,
    #[serde(skip)]
    pub rows: Vec<HydroRow>,
}

impl HydroReport {
    pub fn point(&self, eps: f64, t: f64) -> Option<&HydroPoint> {
        self.points.iter().find(|p| p.epsilon == eps && p.t == t)
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Replicates for every epsilon, coarse-grained at the configured times.
pub fn hydro_experiment(cfg: &Config) -> Result<HydroReport> {
    let ex = &cfg.experiment;
    if ex.times.is_empty() || ex.epsilons.is_empty() || ex.replicates == 0 {
        return Err(HarnessError::Config("hydro needs epsilons, times and replicates".into()));
    }
    let mut times = ex.times.clone();
    times.sort_by(f64::total_cmp);
    let t_end = *times.last().unwrap();
    let base = cfg.model.build(Some(ex.epsilons[0]))?;
    let reaction = reference_reaction(&base, cfg)?;
    let f = reaction.poly();
    let r = ex.block_exponent.unwrap_or(1.0 / (16.0 * base.dim() as f64));
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for (ei, &eps) in ex.epsilons.iter().enumerate() {
        let model = cfg.model.build(Some(eps))?;
        let torus = torus_for(&model, ex.side, None)?;
        let m = torus.side();
        let d = torus.dim();
        let a = block_side(eps, r, m);
        let nb = m / a;
        let v = profile(ex.v, ex.amplitude, ex.side);
        let runs: Vec<Vec<Vec<f64>>> = (0..ex.replicates)
            .into_par_iter()
            .map(|rep| -> Result<Vec<Vec<f64>>> {
                let seed = derive_key(ex.seed, &[kind::REPLICATE, ei as u64, rep as u64]);
                let xi0 = Configuration::bernoulli_with(&torus, derive_key(seed, &[kind::INITIAL]), |s| {
                    let mut c = vec![0i64; d];
                    torus.coords(s, &mut c);
                    v(c[0] as f64 * eps)
                });
                let run = simulate_forward(&model, &xi0, t_end, seed, model.backend, &times)?;
                run.snapshots.iter().map(|(_, c)| Ok(c.coarse_density(a)?)).collect()
            })
            .collect::<Result<_>>()?;
        let centers: Vec<f64> = (0..nb).map(|b| (b * a) as f64 * eps + (a - 1) as f64 * eps / 2.0).collect();
        let refs = reference_values(&f, &model, cfg, &times, &centers)?;
        for (ti, &t) in times.iter().enumerate() {
            let nblocks = nb.pow(d as u32);
            let globals: Vec<f64> = runs.iter().map(|rr| rr[ti].iter().sum::<f64>() / nblocks as f64).collect();
            let (mean, se) = mean_se(&globals);
            let ref_of = |b: usize| refs[ti][b % nb];
            let reference = (0..nblocks).map(ref_of).sum::<f64>() / nblocks as f64;
            let (mut sup, mut sq) = (0.0f64, 0.0);
            for b in 0..nblocks {
                let emp = runs.iter().map(|rr| rr[ti][b]).sum::<f64>() / runs.len() as f64;
                let err = (emp - ref_of(b)).abs();
                sup = sup.max(err);
                sq += err * err;
                let mut coords = Vec::with_capacity(d);
                let mut rest = b;
                for _ in 0..d {
                    coords.push(rest % nb);
                    rest /= nb;
                }
                rows.push(HydroRow { epsilon: eps, t, block: coords, empirical: emp, reference: ref_of(b), abs_err: err });
            }
            points.push(HydroPoint {
                epsilon: eps,
                t,
                torus_side: m,
                block_sites: a,
                replicates: ex.replicates,
                mean_density: mean,
                stderr: se,
                reference,
                discrepancy: (mean - reference).abs(),
                sup_err: sup,
                l2_err: (sq / nblocks as f64).sqrt(),
            });
        }
    }
    Ok(HydroReport { schema_version: SCHEMA_VERSION, seed: ex.seed, config: cfg.clone(), reaction, points, rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    Coexist,
    ZerosTakeOver,
    OnesTakeOver,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FateRun {
    pub replicate: usize,
    pub seed: u64,
    pub outcome: Fate,
    pub absorption_time: Option<f64>,
    /// Mean density over the final window.
    pub terminal_density: f64,
    #[serde(skip)]
    pub series: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FateReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config: Config,
    pub classification: Fate,
    pub thresholds: [f64; 2],
    pub t_max: f64,
    pub window: f64,
    pub torus_side: usize,
    pub counts: Vec<(Fate, usize)>,
    pub runs: Vec<FateRun>,
}

/// Outcome of one density series.
pub fn classify_run(series: &[(f64, f64)], t_max: f64, window: f64, [lo, hi]: [f64; 2]) -> (Fate, Option<f64>, f64) {
    let absorbed = series.iter().find(|&&(_, x)| x == 0.0 || x == 1.0);
    let tail: Vec<f64> = series.iter().filter(|&&(t, _)| t >= t_max - window - 1e-9).map(|&(_, x)| x).collect();
    let terminal = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    if let Some(&(t, x)) = absorbed {
        let fate = if x == 0.0 { Fate::ZerosTakeOver } else { Fate::OnesTakeOver };
        return (fate, Some(t), terminal);
    }
    let fate = if tail.iter().all(|&x| (lo..=hi).contains(&x)) {
        Fate::Coexist
    } else if terminal > hi {
        Fate::OnesTakeOver
    } else if terminal < lo {
        Fate::ZerosTakeOver
    } else {
        Fate::Inconclusive
    };
    (fate, None, terminal)
}

/// Coexistence needs 80% of runs; a takeover needs a strict majority.
pub fn aggregate(outcomes: &[Fate]) -> (Fate, Vec<(Fate, usize)>) {
    let order = [Fate::Coexist, Fate::ZerosTakeOver, Fate::OnesTakeOver, Fate::Inconclusive];
    let counts: Vec<(Fate, usize)> = order.iter().map(|&f| (f, outcomes.iter().filter(|&&o| o == f).count())).collect();
    let n = outcomes.len();
    let c = |f: Fate| counts.iter().find(|(g, _)| *g == f).map_or(0, |x| x.1);
    let class = if 5 * c(Fate::Coexist) >= 4 * n && n > 0 {
        Fate::Coexist
    } else if 2 * c(Fate::OnesTakeOver) > n {
        Fate::OnesTakeOver
    } else if 2 * c(Fate::ZerosTakeOver) > n {
        Fate::ZerosTakeOver
    } else {
        Fate::Inconclusive
    };
    (class, counts)
}

pub fn fate_experiment(cfg: &Config) -> Result<FateReport> {
    let ex = &cfg.experiment;
    let [lo, hi] = ex.thresholds;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(HarnessError::Config("thresholds must satisfy 0 < lo < hi < 1".into()));
    }
    if !(ex.sample_dt > 0.0) || !(ex.t_max >= 0.0) {
        return Err(HarnessError::Config("need sample_dt > 0 and t_max >= 0".into()));
    }
    let model = cfg.model.build(None)?;
    let torus = torus_for(&model, ex.side, cfg.model.torus_side)?;
    let steps = (ex.t_max / ex.sample_dt).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|i| (i as f64 * ex.sample_dt).min(ex.t_max)).collect();
    let runs: Vec<FateRun> = (0..ex.replicates)
        .into_par_iter()
        .map(|rep| -> Result<FateRun> {
            let seed = derive_key(ex.seed, &[kind::REPLICATE, rep as u64]);
            let xi0 = Configuration::bernoulli(&torus, ex.v, derive_key(seed, &[kind::INITIAL]));
            let run = simulate_forward(&model, &xi0, ex.t_max, seed, model.backend, &times)?;
            let series: Vec<(f64, f64)> = run.snapshots.iter().map(|(t, c)| (*t, c.density())).collect();
            let (outcome, absorption_time, terminal_density) = classify_run(&series, ex.t_max, ex.window, ex.thresholds);
            Ok(FateRun { replicate: rep, seed, outcome, absorption_time, terminal_density, series })
        })
        .collect::<Result<_>>()?;
    let outcomes: Vec<Fate> = runs.iter().map(|r| r.outcome).collect();
    let (classification, counts) = aggregate(&outcomes);
    Ok(FateReport {
        schema_version: SCHEMA_VERSION,
        seed: ex.seed,
        config: cfg.clone(),
        classification,
        thresholds: ex.thresholds,
        t_max: ex.t_max,
        window: ex.window,
        torus_side: torus.side(),
        counts,
        runs,
    })
}

/// One forward-versus-dual comparison that disagreed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualMismatch {
    pub trial: u64,
    pub seed: u64,
    pub site: usize,
    pub forward: u8,
    pub dual: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualCheckReport {
    pub trials: u64,
    pub mismatches: u64,
    pub first_mismatch: Option<DualMismatch>,
}

/// Forward simulation against the dual on the same event log, for random
/// (site, seed) pairs and product Bernoulli(1/2) initial data.
pub fn dual_check(model: &ModelSpec, torus: &Torus, t: f64, trials: u64, seed: u64) -> Result<DualCheckReport> {
    let p = model.perturbation.as_ref().ok_or_else(|| HarnessError::Config("dual check needs a g-form model".into()))?;
    let results: Vec<Option<DualMismatch>> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<Option<DualMismatch>> {
            let s = derive_key(seed, &[kind::TRIAL, trial]);
            let site = votersim_core::rng::Stream::new(s, &[kind::TRIAL]).below(torus.sites());
            let xi0 = Configuration::bernoulli(torus, 0.5, derive_key(s, &[kind::INITIAL]));
            let fwd = simulate_forward(model, &xi0, t, s, Backend::Graphical, &[])?.config.get(site);
            let log = gen_log(model, torus, t, s)?;
            let d = run_dual(model, torus, &log, &[site], t)?;
            let dual = compute_from(&d, &xi0, p)?[0];
            Ok((fwd != dual).then_some(DualMismatch { trial, seed: s, site, forward: fwd, dual }))
        })
        .collect::<Result<_>>()?;
    let mismatches = results.iter().filter(|r| r.is_some()).count() as u64;
    Ok(DualCheckReport { trials, mismatches, first_mismatch: results.into_iter().flatten().next() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    #[test]
    fn block_side_rule() {
        // 32^(1 - 1/48) is about 29.6
        assert_eq!(block_side(1.0 / 32.0, 1.0 / 48.0, 32), 32);
        assert_eq!(block_side(1.0 / 32.0, 0.5, 32), 8);
        assert_eq!(block_side(0.1, 0.5, 12), 4);
    }

    #[test]
    fn classify_examples() {
        let flat: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64, 0.5)).collect();
        assert_eq!(classify_run(&flat, 10.0, 2.0, [0.25, 0.75]).0, Fate::Coexist);
        let up: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64, 0.5 + 0.045 * i as f64)).collect();
        assert_eq!(classify_run(&up, 10.0, 2.0, [0.25, 0.75]).0, Fate::OnesTakeOver);
        let dead = vec![(0.0, 0.0), (1.0, 0.0)];
        assert_eq!(classify_run(&dead, 1.0, 0.5, [0.25, 0.75]), (Fate::ZerosTakeOver, Some(0.0), 0.0));
        let (c, _) = aggregate(&[Fate::Coexist, Fate::Coexist, Fate::Coexist, Fate::Coexist, Fate::Inconclusive]);
        assert_eq!(c, Fate::Coexist);
        let (c, counts) = aggregate(&[Fate::OnesTakeOver, Fate::OnesTakeOver, Fate::Coexist]);
        assert_eq!(c, Fate::OnesTakeOver);
        assert_eq!(counts[2], (Fate::OnesTakeOver, 2));
    }

    fn voter_cfg() -> Config {
        let mut c = Config { model: ModelConfig { family: "voter".into(), epsilon: Some(0.125), ..Default::default() }, ..Default::default() };
        c.experiment.epsilons = vec![0.125];
        c.experiment.times = vec![0.0, 0.5, 1.0];
        c.experiment.replicates = 8;
        c.experiment.side = 2.0;
        c
    }

    #[test]
    fn voter_hydro_is_a_martingale() {
        let rep = hydro_experiment(&voter_cfg()).unwrap();
        assert_eq!(rep.points.len(), 3);
        for p in &rep.points {
            assert_eq!(p.reference, 0.5);
            assert!(p.discrepancy < 4.0 * p.stderr + 1e-12, "{p:?}");
        }
    }

    #[test]
    fn hydro_is_order_independent_of_thread_count() {
        let cfg = voter_cfg();
        let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| hydro_experiment(&cfg)).unwrap();
        let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| hydro_experiment(&cfg)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn staydead_from_zeros_is_absorbed_at_once() {
        let mut c = voter_cfg();
        c.model = ModelConfig { family: "lv".into(), theta0: Some(-1.0), theta1: Some(-1.0), epsilon: Some(0.25), ..Default::default() };
        c.experiment.v = 0.0;
        c.experiment.t_max = 0.5;
        c.experiment.replicates = 3;
        let rep = fate_experiment(&c).unwrap();
        assert_eq!(rep.classification, Fate::ZerosTakeOver);
        assert!(rep.runs.iter().all(|r| r.absorption_time == Some(0.0)));
    }

    #[test]
    fn memory_guard() {
        let m = ModelConfig { family: "voter".into(), epsilon: Some(1.0 / 1024.0), ..Default::default() }.build(None).unwrap();
        assert!(matches!(torus_for(&m, 1.0, None), Err(HarnessError::TooLarge { .. })));
    }
}
