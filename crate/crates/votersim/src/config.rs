//! TOML experiment files with `[model]`, `[experiment]` and `[grid]` sections.

use std::path::Path;

use serde::{Deserialize, Serialize};
use votersim_core::kernel::{box_kernel, nn_kernel, Kernel, Weight};
use votersim_core::model::{build_evolution_game, build_lv, build_nlv, build_voter, Backend, GameParams, ModelSpec};

use crate::error::{io_err, HarnessError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub grid: GridConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// voter, lv, game or nlv.
    pub family: String,
    #[serde(default = "default_dim")]
    pub dimension: usize,
    /// `nn`, `box:L`, or a path to a kernel file.
    #[serde(default = "default_kernel")]
    pub kernel: String,
    pub epsilon: Option<f64>,
    pub torus_side: Option<usize>,
    /// graphical or direct; the family default otherwise.
    pub backend: Option<String>,
    pub theta0: Option<f64>,
    pub theta1: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    /// Cooperation game shorthand for the payoffs.
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub w: Option<f64>,
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub a3: Option<f64>,
    pub a4: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<i64>,
    pub lambda: Option<f64>,
}

fn default_dim() -> usize {
    3
}

fn default_kernel() -> String {
    "nn".into()
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: "voter".into(),
            dimension: 3,
            kernel: "nn".into(),
            epsilon: None,
            torus_side: None,
            backend: None,
            theta0: None,
            theta1: None,
            alpha: None,
            beta: None,
            gamma: None,
            delta: None,
            b: None,
            c: None,
            w: None,
            a1: None,
            a2: None,
            a3: None,
            a4: None,
            l: None,
            lambda: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replicates: usize,
    /// Initial density, or the mean of a cosine profile.
    pub v: f64,
    /// Amplitude of a cosine profile in the first coordinate (0 for constant data).
    pub amplitude: f64,
    pub epsilons: Vec<f64>,
    pub times: Vec<f64>,
    /// Physical side of the box; the torus has round(side / epsilon) sites per side.
    pub side: f64,
    /// Block exponent r; blocks have about eps^(r-1) sites per side.
    pub block_exponent: Option<f64>,
    /// Reference reaction term: `closed` or `mc`.
    pub reference: String,
    pub cutoff: f64,
    pub coalesce_n: u64,
    pub t_max: f64,
    pub window: f64,
    pub sample_dt: f64,
    pub thresholds: [f64; 2],
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            replicates: 20,
            v: 0.5,
            amplitude: 0.0,
            epsilons: vec![1.0 / 16.0],
            times: vec![0.25, 0.5, 1.0],
            side: 1.0,
            block_exponent: None,
            reference: "closed".into(),
            cutoff: 1e3,
            coalesce_n: 20_000,
            t_max: 10.0,
            window: 2.0,
            sample_dt: 0.1,
            thresholds: [0.25, 0.75],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Space step of the PDE reference, in physical units.
    pub dx: f64,
    /// Diffusion coefficient; the kernel variance when absent.
    pub sigma2: Option<f64>,
    pub ode_dt: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { dx: 0.01, sigma2: None, ode_dt: 1e-3 }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Config::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFile {
    pub dimension: usize,
    pub builder: Option<String>,
    #[serde(default)]
    pub atom: Vec<KernelAtom>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelAtom {
    pub offset: Vec<i64>,
    /// `n/m` or an integer.
    pub weight: String,
}

fn parse_weight(s: &str) -> Result<Weight> {
    let bad = || HarnessError::Config(format!("bad weight {s:?}"));
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
        None => (s.trim().parse().map_err(|_| bad())?, 1),
    };
    if d == 0 {
        return Err(bad());
    }
    Ok(Weight::new(n, d))
}

fn builder(name: &str, dim: usize) -> Result<Option<Kernel>> {
    if name == "nn" {
        return Ok(Some(nn_kernel(dim)));
    }
    if let Some(l) = name.strip_prefix("box:") {
        let l: i64 = l.parse().map_err(|_| HarnessError::Config(format!("bad box size in {name:?}")))?;
        if l < 1 {
            return Err(HarnessError::Config("box size must be at least 1".into()));
        }
        return Ok(Some(box_kernel(dim, l)));
    }
    Ok(None)
}

pub fn kernel_from_file(kf: &KernelFile) -> Result<Kernel> {
    let k = match &kf.builder {
        Some(b) => builder(b, kf.dimension)?.ok_or_else(|| HarnessError::Config(format!("unknown kernel builder {b:?}")))?,
        None => {
            let atoms: Result<Vec<(Vec<i64>, Weight)>> =
                kf.atom.iter().map(|a| Ok((a.offset.clone(), parse_weight(&a.weight)?))).collect();
            Kernel::from_atoms(kf.dimension, &atoms?)?
        }
    };
    k.validate()?;
    Ok(k)
}

/// `nn`, `box:L`, or a kernel file path.
pub fn load_kernel(spec: &str, dim: usize) -> Result<Kernel> {
    if let Some(k) = builder(spec, dim)? {
        return Ok(k);
    }
    let text = std::fs::read_to_string(spec).map_err(io_err(spec))?;
    let kf: KernelFile = toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
    kernel_from_file(&kf)
}

fn need(v: Option<f64>, name: &str) -> Result<f64> {
    v.ok_or_else(|| HarnessError::Config(format!("missing model key {name}")))
}

impl ModelConfig {
    pub fn game_params(&self) -> Result<GameParams> {
        let w = need(self.w, "w")?;
        Ok(match (self.b, self.c) {
            (Some(b), Some(c)) => GameParams::cooperation(b, c, w),
            _ => GameParams {
                alpha: need(self.alpha, "alpha")?,
                beta: need(self.beta, "beta")?,
                gamma: need(self.gamma, "gamma")?,
                delta: need(self.delta, "delta")?,
                w,
            },
        })
    }

    /// Build the model, with `epsilon` overriding the configured value.
    pub fn build(&self, epsilon: Option<f64>) -> Result<ModelSpec> {
        let eps = epsilon.or(self.epsilon);
        let d = self.dimension;
        let m = match self.family.as_str() {
            "voter" => build_voter(need(eps, "epsilon")?, &load_kernel(&self.kernel, d)?)?,
            "lv" => build_lv(need(self.theta0, "theta0")?, need(self.theta1, "theta1")?, need(eps, "epsilon")?, &load_kernel(&self.kernel, d)?)?,
            "game" => build_evolution_game(self.game_params()?, &load_kernel(&self.kernel, d)?)?,
            "nlv" => {
                let a = [need(self.a1, "a1")?, need(self.a2, "a2")?, need(self.a3, "a3")?, need(self.a4, "a4")?];
                build_nlv(&a, d, self.l.unwrap_or(1), self.lambda.unwrap_or(0.0), need(eps, "epsilon")?)?
            }
            other => return Err(HarnessError::Config(format!("unknown family {other:?}"))),
        };
        Ok(match self.backend.as_deref() {
            None => m,
            Some("graphical") => m.with_backend(Backend::Graphical),
            Some("direct") => m.with_backend(Backend::Direct),
            Some(other) => return Err(HarnessError::Config(format!("unknown backend {other:?}"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use votersim_core::model::Family;

    #[test]
    fn parse_and_build() {
        let c = Config::parse(
            r#"
            [model]
            family = "lv"
            theta0 = -1.0
            theta1 = -1.0
            epsilon = 0.125

            [experiment]
            seed = 7
            epsilons = [0.0625, 0.03125]

            [grid]
            dx = 0.02
            "#,
        )
        .unwrap();
        assert_eq!(c.experiment.seed, 7);
        assert_eq!(c.experiment.replicates, 20);
        let m = c.model.build(None).unwrap();
        assert_eq!(m.family, Family::Lv { theta0: -1.0, theta1: -1.0 });
        assert_eq!(c.model.build(Some(0.0625)).unwrap().epsilon, 0.0625);
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn game_shorthand_and_errors() {
        let mut m = ModelConfig { family: "game".into(), b: Some(7.0), c: Some(1.0), w: Some(0.002), ..Default::default() };
        let spec = m.build(None).unwrap();
        assert!(matches!(spec.family, Family::Game(_)));
        m.w = Some(0.5);
        assert!(m.build(None).is_err());
        m.family = "nope".into();
        assert!(matches!(m.build(None), Err(HarnessError::Config(_))));
        assert!(Config::parse("[model]\nfamily = \"lv\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn kernel_files() {
        let kf: KernelFile = toml::from_str(
            r#"
            dimension = 1
            [[atom]]
            offset = [1]
            weight = "1/2"
            [[atom]]
            offset = [-1]
            weight = "1/2"
            "#,
        )
        .unwrap();
        let k = kernel_from_file(&kf).unwrap();
        assert_eq!(k.len(), 2);
        let lop = KernelFile { dimension: 1, builder: None, atom: vec![KernelAtom { offset: vec![1], weight: "1".into() }] };
        assert!(kernel_from_file(&lop).is_err());
        assert_eq!(load_kernel("box:1", 2).unwrap().len(), 8);
        assert!(load_kernel("/nonexistent/kernel.toml", 2).is_err());
    }
}
