//! Command-line interface.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use votersim_core::coalesce::{estimate_nu0, p2_p3, pattern_tally, CoalescenceEstimate, PatternQuery, PatternTally};
use votersim_core::engine::{simulate_forward, Configuration};
use votersim_core::kernel::{independent_pair_law, nn_kernel};
use votersim_core::model::GameParams;
use votersim_core::pde::{solve_ode, solve_rd_1d, solve_rd_radial, wave_speed, Grid1D, RadialGrid};
use votersim_core::reaction::{coop_f, coop_rule, lv_f, lv_m0, lv_phase, nlv_f1, nlv_flambda, nlv_phase, q_to_f64, PhaseLabel, Provenance, ReactionPolynomial};
use votersim_core::rng::{derive_key, kind};

use crate::config::{load_kernel, Config};
use crate::emit::{emit_fate, emit_hydro, fate_summary, to_json};
use crate::error::{io_err, HarnessError, Result};
use crate::harness::{dual_check, fate_experiment, hydro_experiment, torus_for};
use crate::snapshot::{write_binary, write_block_csv};

#[derive(Parser, Debug)]
#[command(name = "votersim", version, about = "Voter model perturbations: simulation, duality, coalescence and PDE limits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Bin,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; falls back to VOTERSIM_JOBS, then to all cores.
    #[arg(long, env = "VOTERSIM_JOBS")]
    pub jobs: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Lv,
    Game,
    Nlv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PdeMode {
    Ode,
    Line,
    Radial,
    Speed,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Particle densities against the ODE/PDE reference for a list of epsilons.
    Hydro(RunArgs),
    /// Coexistence or takeover classification of long runs.
    Fate(RunArgs),
    /// One forward run with snapshots of block densities or packed bits.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Snapshot times; the experiment times when absent.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        /// Block side in sites for CSV snapshots.
        #[arg(long, default_value_t = 1)]
        block: usize,
    },
    /// Compare forward runs with the dual computation on shared event logs.
    DualCheck {
        #[arg(long)]
        model_config: PathBuf,
        #[arg(long)]
        torus: usize,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        time: f64,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, env = "VOTERSIM_JOBS")]
        jobs: Option<usize>,
    },
    /// Coalescing random walk pattern probabilities.
    Coalesce {
        #[arg(long, default_value = "nn")]
        kernel: String,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long)]
        pattern: Vec<String>,
        #[arg(long, default_value_t = 1e4)]
        cutoff: f64,
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, env = "VOTERSIM_JOBS")]
        jobs: Option<usize>,
    },
    /// Phase label and reaction polynomial of a model family.
    #[command(allow_negative_numbers = true)]
    Phase(PhaseArgs),
    /// Solve the reaction(-diffusion) equation for an inline polynomial.
    #[command(allow_negative_numbers = true)]
    Pde(PdeArgs),
}

#[derive(Args, Debug)]
pub struct PhaseArgs {
    #[arg(long, value_enum)]
    pub family: Family,
    #[arg(long)]
    pub theta0: Option<f64>,
    #[arg(long)]
    pub theta1: Option<f64>,
    #[arg(long)]
    pub m0: Option<f64>,
    #[arg(long)]
    pub p2: Option<f64>,
    #[arg(long)]
    pub p3: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    /// Neighborhood size of the game.
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    #[arg(long)]
    pub p01: Option<f64>,
    #[arg(long)]
    pub p122: Option<f64>,
    #[arg(long)]
    pub p123: Option<f64>,
    #[arg(long)]
    pub a1: Option<f64>,
    #[arg(long)]
    pub a2: Option<f64>,
    #[arg(long)]
    pub a3: Option<f64>,
    #[arg(long)]
    pub a4: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Estimate the coalescence probabilities instead of reading them.
    #[arg(long)]
    pub auto_coalesce: bool,
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
    #[arg(long, default_value_t = 1e3)]
    pub cutoff: f64,
    #[arg(long, default_value_t = 20_000)]
    pub n: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct PdeArgs {
    /// Coefficients of f, lowest degree first, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub f: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dx: f64,
    #[arg(long = "T", default_value_t = 10.0)]
    pub t: f64,
    #[arg(long, value_enum, default_value = "ode")]
    pub mode: PdeMode,
    /// Initial value (ode), bump height (line, radial).
    #[arg(long, default_value_t = 0.5)]
    pub u0: f64,
    /// Bump half-width (line, radial).
    #[arg(long, default_value_t = 1.0)]
    pub width: f64,
    #[arg(long, default_value_t = 50.0)]
    pub half_width: f64,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long, default_value_t = 0.5)]
    pub level: f64,
    #[arg(long, default_value_t = 1.0)]
    pub frame_every: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j.max(1));
    }
    b.build().map_err(|e| HarnessError::Config(e.to_string()))
}

fn load(run: &RunArgs) -> Result<Config> {
    let mut cfg = Config::load(&run.config)?;
    if let Some(s) = run.seed {
        cfg.experiment.seed = s;
    }
    Ok(cfg)
}

fn emit_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).map_err(io_err("<stdout>"))
}

fn list(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| format!("{}\n", p.display())).collect()
}

fn cmd_hydro(run: &RunArgs) -> Result<i32> {
    let cfg = load(run)?;
    let rep = pool(run.jobs)?.install(|| hydro_experiment(&cfg))?;
    let paths = emit_hydro(&rep, &run.out)?;
    emit_stdout(&if run.format == Format::Json { to_json(&rep) } else { list(&paths) })?;
    Ok(0)
}

fn cmd_fate(run: &RunArgs) -> Result<i32> {
    let cfg = load(run)?;
    let rep = pool(run.jobs)?.install(|| fate_experiment(&cfg))?;
    let paths = emit_fate(&rep, &run.out)?;
    emit_stdout(&if run.format == Format::Json { to_json(&fate_summary(&rep)) } else { list(&paths) })?;
    Ok(0)
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    seed: u64,
    torus_side: usize,
    events: u64,
    snapshots: Vec<(f64, f64)>,
    files: Vec<String>,
    config: &'a Config,
}

fn cmd_simulate(run: &RunArgs, times: &[f64], block: usize) -> Result<i32> {
    let cfg = load(run)?;
    let ex = &cfg.experiment;
    let model = cfg.model.build(None)?;
    let torus = torus_for(&model, ex.side, cfg.model.torus_side)?;
    let mut times = if times.is_empty() { ex.times.clone() } else { times.to_vec() };
    times.sort_by(f64::total_cmp);
    let t_end = times.last().copied().unwrap_or(0.0);
    let seed = derive_key(ex.seed, &[kind::REPLICATE, 0]);
    let xi0 = Configuration::bernoulli(&torus, ex.v, derive_key(seed, &[kind::INITIAL]));
    let fr = simulate_forward(&model, &xi0, t_end, seed, model.backend, &times)?;
    std::fs::create_dir_all(&run.out).map_err(io_err(&run.out))?;
    let mut files = Vec::new();
    match run.format {
        Format::Bin => {
            for (i, (t, c)) in fr.snapshots.iter().enumerate() {
                let p = run.out.join(format!("snapshot_{i:04}.bin"));
                let mut f = std::fs::File::create(&p).map_err(io_err(&p))?;
                write_binary(&mut f, *t, c).map_err(io_err(&p))?;
                files.push(p);
            }
        }
        _ => {
            let p = run.out.join("snapshots.csv");
            let f = std::fs::File::create(&p).map_err(io_err(&p))?;
            let mut w = csv::Writer::from_writer(f);
            for (i, (t, c)) in fr.snapshots.iter().enumerate() {
                write_block_csv(&mut w, *t, c, block, i == 0)?;
            }
            w.flush().map_err(io_err(&p))?;
            files.push(p);
        }
    }
    let summary = SimulateSummary {
        seed: ex.seed,
        torus_side: torus.side(),
        events: fr.events,
        snapshots: fr.snapshots.iter().map(|(t, c)| (*t, c.density())).collect(),
        files: files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect(),
        config: &cfg,
    };
    let json = to_json(&summary);
    let jp = run.out.join("simulate.json");
    std::fs::write(&jp, &json).map_err(io_err(&jp))?;
    emit_stdout(&if run.format == Format::Json { json } else { list(&files) })?;
    Ok(0)
}

fn cmd_dual_check(model_config: &Path, side: usize, eps: Option<f64>, t: f64, trials: u64, seed: u64, jobs: Option<usize>) -> Result<i32> {
    let cfg = Config::load(model_config)?;
    let model = cfg.model.build(eps)?;
    let torus = model.torus(side)?;
    let rep = pool(jobs)?.install(|| dual_check(&model, &torus, t, trials, seed))?;
    emit_stdout(&to_json(&rep))?;
    Ok(if rep.mismatches == 0 { 0 } else { 1 })
}

#[allow(clippy::too_many_arguments)]
fn cmd_coalesce(kernel: &str, dim: usize, patterns: &[String], cutoff: f64, n: u64, seed: u64, jobs: Option<usize>) -> Result<i32> {
    let k = load_kernel(kernel, dim)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let cerr = |e: csv::Error| HarnessError::Config(e.to_string());
    w.write_record(["pattern", "value", "stderr", "n", "cutoff"]).map_err(cerr)?;
    let pl = pool(jobs)?;
    for (tag, text) in patterns.iter().enumerate() {
        let q = PatternQuery::parse(text, k.dim())?;
        let chunk = 4096u64;
        let parts: Vec<_> = pl.install(|| {
            (0..n.div_ceil(chunk))
                .into_par_iter()
                .map(|c| pattern_tally(&q, &k, None, &[cutoff], seed, tag as u64, c * chunk..((c + 1) * chunk).min(n)))
                .collect::<std::result::Result<Vec<_>, _>>()
        })?;
        let mut total = PatternTally::default();
        for p in &parts {
            total.merge(p);
        }
        let e = CoalescenceEstimate::from_count(total.count(0), n, cutoff);
        w.write_record([text.clone(), e.value.to_string(), e.stderr.to_string(), n.to_string(), cutoff.to_string()]).map_err(cerr)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    emit_stdout(&String::from_utf8_lossy(&bytes))?;
    Ok(0)
}

#[derive(Serialize)]
struct PhaseOut {
    family: &'static str,
    params: BTreeMap<String, f64>,
    label: String,
    f_coefficients: Vec<f64>,
    interior_roots: Vec<f64>,
}

fn need(v: Option<f64>, name: &str) -> Result<f64> {
    v.ok_or_else(|| HarnessError::Config(format!("missing --{name}")))
}

fn coeffs(f: &ReactionPolynomial) -> Vec<f64> {
    f.coeffs_f64(f.degree().map_or(1, |d| d + 1))
}

fn estimate(text: &str, a: &PhaseArgs, tag: u64) -> Result<f64> {
    let k = nn_kernel(a.dim);
    let q = PatternQuery::parse(text, a.dim)?;
    let t = pattern_tally(&q, &k, None, &[a.cutoff], a.seed, tag, 0..a.n)?;
    Ok(t.count(0) as f64 / a.n as f64)
}

fn cmd_phase(a: &PhaseArgs) -> Result<i32> {
    let mut params: Vec<(String, f64)> = Vec::new();
    let out = match a.family {
        Family::Lv => {
            let (t0, t1) = (need(a.theta0, "theta0")?, need(a.theta1, "theta1")?);
            params.extend([("theta0".into(), t0), ("theta1".into(), t1)]);
            let (p2, p3) = if a.auto_coalesce {
                let k = nn_kernel(a.dim);
                p2_p3(&estimate_nu0(&independent_pair_law(&k), &k, a.cutoff, a.n, a.seed))
            } else {
                (a.p2.unwrap_or(f64::NAN), a.p3.unwrap_or(f64::NAN))
            };
            let m0 = match a.m0 {
                Some(m) => m,
                None if p2.is_finite() && p3.is_finite() => lv_m0(p2, p3),
                None => return Err(HarnessError::Config("lv needs --m0, --p2/--p3 or --auto-coalesce".into())),
            };
            params.push(("m0".into(), m0));
            let f = if p2.is_finite() && p3.is_finite() {
                params.extend([("p2".into(), p2), ("p3".into(), p3)]);
                Some(lv_f(t0, t1, p2, p3))
            } else {
                None
            };
            let roots = f.as_ref().map(|f| f.roots_in_unit_interval(1e-12)).transpose()?.unwrap_or_default();
            PhaseOut {
                family: "lv",
                params: params.into_iter().collect(),
                label: lv_phase(t0, t1, m0).to_string(),
                f_coefficients: f.as_ref().map(coeffs).unwrap_or_default(),
                interior_roots: roots.into_iter().filter(|&r| r > 0.0 && r < 1.0).collect(),
            }
        }
        Family::Game => {
            let gp = match (a.b, a.c) {
                (Some(b), Some(c)) => GameParams::cooperation(b, c, 0.0),
                _ => GameParams { alpha: need(a.alpha, "alpha")?, beta: need(a.beta, "beta")?, gamma: need(a.gamma, "gamma")?, delta: need(a.delta, "delta")?, w: 0.0 },
            };
            params.extend([("alpha".into(), gp.alpha), ("beta".into(), gp.beta), ("gamma".into(), gp.gamma), ("delta".into(), gp.delta), ("k".into(), a.k as f64)]);
            let (p01, p122, p123) = if a.auto_coalesce {
                (estimate("0|e1", a, 0)?, estimate("e1|e2,e2+e3", a, 1)?, estimate("e1|e2|e2+e3", a, 2)?)
            } else {
                (a.p01.unwrap_or(f64::NAN), a.p122.unwrap_or(f64::NAN), a.p123.unwrap_or(f64::NAN))
            };
            let f = (p01.is_finite() && p122.is_finite() && p123.is_finite()).then(|| coop_f(&gp, a.k, p01, p122, p123));
            let label = match (a.b, a.c) {
                (Some(b), Some(c)) => coop_rule(b, c, a.k),
                _ => match &f {
                    Some(f) => sign_label(f),
                    None => return Err(HarnessError::Config("general games need --p01/--p122/--p123 or --auto-coalesce".into())),
                },
            };
            let roots = f.as_ref().map(|f| f.roots_in_unit_interval(1e-12)).transpose().unwrap_or(None).unwrap_or_default();
            PhaseOut {
                family: "game",
                params: params.into_iter().collect(),
                label: label.to_string(),
                f_coefficients: f.as_ref().map(coeffs).unwrap_or_default(),
                interior_roots: roots.into_iter().filter(|&r| r > 0.0 && r < 1.0).collect(),
            }
        }
        Family::Nlv => {
            let a4 = [need(a.a1, "a1")?, need(a.a2, "a2")?, need(a.a3, "a3")?, need(a.a4, "a4")?];
            for (i, v) in a4.iter().enumerate() {
                params.push((format!("a{}", i + 1), *v));
            }
            params.push(("lambda".into(), a.lambda));
            let (_, b1, b2) = nlv_f1(&a4);
            let (b1, b2) = (q_to_f64(&b1), q_to_f64(&b2));
            params.extend([("b1".into(), b1), ("b2".into(), b2)]);
            let f = nlv_flambda(&a4, a.lambda);
            let roots = f.roots_in_unit_interval(1e-12).unwrap_or_default();
            PhaseOut {
                family: "nlv",
                params: params.into_iter().collect(),
                label: nlv_phase(b1, b2).to_string(),
                f_coefficients: coeffs(&f),
                interior_roots: roots.into_iter().filter(|&r| r > 0.0 && r < 1.0).collect(),
            }
        }
    };
    emit_stdout(&to_json(&out))?;
    Ok(0)
}

/// Ones or zeros when f keeps one sign on (0,1).
fn sign_label(f: &ReactionPolynomial) -> PhaseLabel {
    let samples: Vec<f64> = (1..100).map(|i| f.eval(i as f64 / 100.0)).collect();
    if samples.iter().all(|&v| v > 0.0) {
        PhaseLabel::Cooperators
    } else if samples.iter().all(|&v| v < 0.0) {
        PhaseLabel::Defectors
    } else {
        PhaseLabel::Boundary
    }
}

fn cmd_pde(a: &PdeArgs) -> Result<i32> {
    let f = ReactionPolynomial::from_f64(&a.f, Provenance::Inline);
    let mut w = csv::Writer::from_writer(Vec::new());
    let cerr = |e: csv::Error| HarnessError::Config(e.to_string());
    match a.mode {
        PdeMode::Ode => {
            w.write_record(["t", "x", "u"]).map_err(cerr)?;
            let steps = (a.t / a.frame_every).ceil().max(1.0) as usize;
            let dt = (a.dx * a.dx).min(1e-3);
            let mut u = a.u0;
            w.write_record(["0".to_string(), String::new(), u.to_string()]).map_err(cerr)?;
            for i in 1..=steps {
                let t = (i as f64 * a.frame_every).min(a.t);
                let prev = ((i - 1) as f64 * a.frame_every).min(a.t);
                u = solve_ode(&f, u, t - prev, dt)?;
                w.write_record([t.to_string(), String::new(), u.to_string()]).map_err(cerr)?;
            }
        }
        PdeMode::Line => {
            let g = Grid1D::new(-a.half_width, a.half_width, a.dx, a.sigma2);
            let v: Vec<f64> = (0..g.cells()).map(|i| if g.x(i).abs() < a.width { a.u0 } else { 0.0 }).collect();
            let sol = solve_rd_1d(&f, &v, a.t, &g, Some(a.frame_every))?;
            w.write_record(["t", "x", "u"]).map_err(cerr)?;
            for (t, u) in &sol.frames {
                for (i, x) in u.iter().enumerate() {
                    w.write_record([t.to_string(), g.x(i).to_string(), x.to_string()]).map_err(cerr)?;
                }
            }
        }
        PdeMode::Radial => {
            let g = RadialGrid::new(a.half_width, a.dx, a.sigma2, a.d);
            let v: Vec<f64> = (0..g.points()).map(|i| if g.r(i) < a.width { a.u0 } else { 0.0 }).collect();
            let sol = solve_rd_radial(&f, &v, a.t, &g, Some(a.frame_every))?;
            w.write_record(["t", "x", "u"]).map_err(cerr)?;
            for (t, u) in &sol.frames {
                for (i, x) in u.iter().enumerate() {
                    w.write_record([t.to_string(), g.r(i).to_string(), x.to_string()]).map_err(cerr)?;
                }
            }
        }
        PdeMode::Speed => {
            let g = Grid1D::new(-a.half_width, a.half_width, a.dx, a.sigma2);
            let ws = wave_speed(&f, &g, a.t, a.level)?;
            w.write_record(["t", "x", "u"]).map_err(cerr)?;
            for (t, x) in &ws.track {
                w.write_record([t.to_string(), x.to_string(), a.level.to_string()]).map_err(cerr)?;
            }
            eprintln!("speed {} integral_sign {}", ws.speed, ws.integral_sign);
        }
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    match &a.out {
        Some(p) => std::fs::write(p, &bytes).map_err(io_err(p))?,
        None => emit_stdout(&String::from_utf8_lossy(&bytes))?,
    }
    Ok(0)
}

pub fn run(cli: Cli) -> Result<i32> {
    match &cli.command {
        Command::Hydro(r) => cmd_hydro(r),
        Command::Fate(r) => cmd_fate(r),
        Command::Simulate { run, times, block } => cmd_simulate(run, times, *block),
        Command::DualCheck { model_config, torus, epsilon, time, trials, seed, jobs } => {
            cmd_dual_check(model_config, *torus, *epsilon, *time, *trials, *seed, *jobs)
        }
        Command::Coalesce { kernel, dim, pattern, cutoff, n, seed, jobs } => cmd_coalesce(kernel, *dim, pattern, *cutoff, *n, *seed, *jobs),
        Command::Phase(a) => cmd_phase(a),
        Command::Pde(a) => cmd_pde(a),
    }
}

pub fn main() -> std::process::ExitCode {
    match run(Cli::parse()) {
        Ok(code) => std::process::ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(2)
        }
    }
}
