//! Voter model perturbations: rate tables, the non-negative g-form, and the
//! Lotka-Volterra, evolutionary game and nonlinear voter builders.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernel::{box_kernel, box_points, independent_pair_law, Kernel, OffspringLaw, Weight};
use crate::lattice::{Configuration, Torus};

/// Offspring law plus the tables g0, g1 indexed by bit-packed eta (bit j = Y^{j+1}).
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSpec {
    pub offspring: OffspringLaw,
    pub g0: Vec<f64>,
    pub g1: Vec<f64>,
    pub cstar: f64,
}

impl PerturbationSpec {
    /// Validates the tables; `cstar = None` picks max g1 + max g0 + 1.
    pub fn new(offspring: OffspringLaw, g0: Vec<f64>, g1: Vec<f64>, cstar: Option<f64>) -> Result<Self> {
        let size = 1usize << offspring.n0();
        for t in [&g0, &g1] {
            if t.len() != size {
                return Err(Error::TableSize { expected: size, got: t.len() });
            }
            if t.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidRates("g tables must be finite and non-negative"));
            }
        }
        let min_c = max_of(&g0) + max_of(&g1) + 1.0;
        let cstar = cstar.unwrap_or(min_c);
        if cstar < min_c {
            return Err(Error::InvalidRates("cstar below max g1 + max g0 + 1"));
        }
        Ok(PerturbationSpec { offspring, g0, g1, cstar })
    }

    /// No perturbation: N0 = 1, g identically zero.
    pub fn zero(k: &Kernel) -> Self {
        let q = OffspringLaw::Independent { kernel: k.clone(), n0: 1 };
        PerturbationSpec::new(q, vec![0.0; 2], vec![0.0; 2], None).expect("valid")
    }

    pub fn n0(&self) -> usize {
        self.offspring.n0()
    }

    /// All-zeros is a trap.
    pub fn staydead(&self) -> bool {
        self.g1[0] == 0.0
    }

    #[inline]
    pub fn g(&self, i: u8, eta: usize) -> f64 {
        if i == 1 {
            self.g1[eta]
        } else {
            self.g0[eta]
        }
    }

    /// E_q g_i(xi(x + Y^1), ..., xi(x + Y^{N0})).
    pub fn expected_g(&self, i: u8, cfg: &Configuration, x: usize) -> f64 {
        let torus = cfg.torus();
        let table = if i == 1 { &self.g1 } else { &self.g0 };
        match &self.offspring {
            OffspringLaw::Independent { kernel, n0 } => {
                let f1 = local_density_with(kernel, cfg, x, 1);
                let f0 = 1.0 - f1;
                (0..table.len())
                    .map(|eta| {
                        let mut p = 1.0;
                        for j in 0..*n0 {
                            p *= if (eta >> j) & 1 == 1 { f1 } else { f0 };
                        }
                        p * table[eta]
                    })
                    .sum()
            }
            OffspringLaw::WithoutReplacement { dim, points, n0 } => {
                let m = points.len() / dim;
                let n1 = (0..m)
                    .filter(|&r| cfg.get(torus.shift(x, &points[r * dim..(r + 1) * dim])) == 1)
                    .count();
                let denom = falling(m, *n0);
                (0..table.len())
                    .map(|eta| {
                        let k1 = (eta as u32).count_ones() as usize;
                        let p = falling(n1, k1) * falling(m - n1, n0 - k1) / denom;
                        p * table[eta]
                    })
                    .sum()
            }
            OffspringLaw::Atoms { dim, n0, offsets, weights, .. } => {
                let w = n0 * dim;
                let mut total = 0.0;
                for (a, wt) in weights.iter().enumerate() {
                    let ys = &offsets[a * w..(a + 1) * w];
                    let mut eta = 0usize;
                    for j in 0..*n0 {
                        eta |= (cfg.get(torus.shift(x, &ys[j * dim..(j + 1) * dim])) as usize) << j;
                    }
                    total += to_f64(*wt) * table[eta];
                }
                total
            }
        }
    }
}

fn falling(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).map(|i| (n - i) as f64).product()
}

fn max_of(t: &[f64]) -> f64 {
    t.iter().copied().fold(0.0, f64::max)
}

fn to_f64(w: Weight) -> f64 {
    *w.numer() as f64 / *w.denom() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Graphical,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub w: f64,
}

impl GameParams {
    /// Cooperator/defector payoffs (b - c, -c; b, 0).
    pub fn cooperation(b: f64, c: f64, w: f64) -> GameParams {
        GameParams { alpha: b - c, beta: -c, gamma: b, delta: 0.0, w }
    }

    /// 2k(1 + |alpha| + |beta| + |gamma| + |delta|).
    pub fn r_bound(&self, k_deg: usize) -> f64 {
        2.0 * k_deg as f64
            * (1.0 + self.alpha.abs() + self.beta.abs() + self.gamma.abs() + self.delta.abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    Voter,
    Lv { theta0: f64, theta1: f64 },
    Game(GameParams),
    Nlv { a: [f64; 5], lambda: f64 },
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kernel: Kernel,
    pub epsilon: f64,
    /// Voter rate used with the g-form (eps^-2 - eps1^-2, or eps^-2 when eps1 is infinite).
    pub voter_rate: f64,
    /// eps1^-2 used to build the g-form; 0 for the infinite-eps1 convention.
    pub eps1_inv2: f64,
    pub perturbation: Option<PerturbationSpec>,
    pub backend: Backend,
    pub family: Family,
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// eps^-2, the full voter rate of the unreduced process.
    pub fn eps_inv2(&self) -> f64 {
        1.0 / (self.epsilon * self.epsilon)
    }

    /// Largest lattice distance a rate at x can look.
    pub fn interaction_range(&self) -> usize {
        let mut r = self.kernel.range();
        if let Some(p) = &self.perturbation {
            r = r.max(p.offspring.range());
        }
        match self.family {
            Family::Game(_) => r.max(2 * self.kernel.range()),
            _ => r,
        }
    }

    pub fn torus(&self, side: usize) -> Result<Torus> {
        Torus::checked(self.dim(), side, self.interaction_range())
    }

    pub fn with_backend(mut self, b: Backend) -> Self {
        self.backend = b;
        self
    }

    pub fn local_density(&self, cfg: &Configuration, x: usize, i: u8) -> f64 {
        local_density_with(&self.kernel, cfg, x, i)
    }

    /// Flip rate at x under the model's backend.
    pub fn flip_rate(&self, cfg: &Configuration, x: usize) -> Result<f64> {
        match self.backend {
            Backend::Graphical => self.graphical_rate(cfg, x),
            Backend::Direct => self.direct_rate(cfg, x),
        }
    }

    /// voter_rate * c^v + E g_{1 - xi(x)}.
    pub fn graphical_rate(&self, cfg: &Configuration, x: usize) -> Result<f64> {
        let p = self.perturbation.as_ref().ok_or(Error::InvalidRates("model has no g-form"))?;
        let i = cfg.get(x);
        let cv = self.local_density(cfg, x, 1 - i);
        Ok(self.voter_rate * cv + p.expected_g(1 - i, cfg, x))
    }

    /// Closed-form rates of the unreduced process.
    pub fn direct_rate(&self, cfg: &Configuration, x: usize) -> Result<f64> {
        let i = cfg.get(x);
        let e2 = self.eps_inv2();
        let rate = match &self.family {
            Family::Voter => e2 * self.local_density(cfg, x, 1 - i),
            Family::Lv { theta0, theta1 } => {
                // h_j = theta_{1-j} f_j^2 for a flip to j
                let j = 1 - i;
                let fj = self.local_density(cfg, x, j);
                let th = if j == 1 { *theta0 } else { *theta1 };
                e2 * fj + th * fj * fj
            }
            Family::Game(gp) => e2 * game_r(&self.kernel, gp, cfg, x, 1 - i),
            Family::Nlv { .. } | Family::Custom => {
                let p = self.perturbation.as_ref().ok_or(Error::InvalidRates("model has no g-form"))?;
                e2 * self.local_density(cfg, x, 1 - i) + p.expected_g(1 - i, cfg, x)
            }
        };
        if rate < -1e-12 {
            return Err(Error::NegativeRate(rate));
        }
        Ok(rate.max(0.0))
    }

    /// Upper bound on every direct flip rate, used for uniformization.
    pub fn direct_rate_bound(&self) -> f64 {
        let e2 = self.eps_inv2();
        match &self.family {
            Family::Voter => e2,
            Family::Lv { theta0, theta1 } => e2 + theta0.max(*theta1).max(0.0),
            Family::Game(_) => e2,
            Family::Nlv { .. } | Family::Custom => {
                let p = self.perturbation.as_ref().map(|p| max_of(&p.g0).max(max_of(&p.g1))).unwrap_or(0.0);
                e2 + p
            }
        }
    }
}

pub fn local_density_with(k: &Kernel, cfg: &Configuration, x: usize, i: u8) -> f64 {
    let t = cfg.torus();
    let mut n = 0u64;
    for j in 0..k.len() {
        if cfg.get(t.shift(x, k.offset(j))) == i {
            n += k.counts()[j];
        }
    }
    n as f64 / k.denom() as f64
}

/// Number of type-1 sites among the neighbors of y.
fn ones_around(k: &Kernel, cfg: &Configuration, y: usize) -> usize {
    let t = cfg.torus();
    (0..k.len()).filter(|&j| cfg.get(t.shift(y, k.offset(j))) == 1).count()
}

pub(crate) fn fitness(gp: &GameParams, state: u8, n1: usize, n0: usize) -> f64 {
    let (a, b) = if state == 1 { (gp.alpha, gp.beta) } else { (gp.gamma, gp.delta) };
    1.0 - gp.w + gp.w * (a * n1 as f64 + b * n0 as f64)
}

/// r_i(x): fitness-weighted share of type-i neighbors.
pub fn game_r(k: &Kernel, gp: &GameParams, cfg: &Configuration, x: usize, i: u8) -> f64 {
    let t = cfg.torus();
    let kd = k.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..kd {
        let y = t.shift(x, k.offset(j));
        let s = cfg.get(y);
        let n1 = ones_around(k, cfg, y);
        let rho = fitness(gp, s, n1, kd - n1);
        den += rho;
        if s == i {
            num += rho;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Pure voter model at rate eps^-2.
pub fn build_voter(epsilon: f64, k: &Kernel) -> Result<ModelSpec> {
    k.validate()?;
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::EpsilonTooLarge(epsilon));
    }
    Ok(ModelSpec {
        kernel: k.clone(),
        epsilon,
        voter_rate: 1.0 / (epsilon * epsilon),
        eps1_inv2: 0.0,
        perturbation: Some(PerturbationSpec::zero(k)),
        backend: Backend::Graphical,
        family: Family::Voter,
    })
}

/// The two g tables of the Lotka-Volterra g-form for a given eps1^-2.
pub fn lv_tables(theta0: f64, theta1: f64, e: f64) -> (Vec<f64>, Vec<f64>) {
    let mut g = [vec![0.0; 4], vec![0.0; 4]];
    for (i, table) in g.iter_mut().enumerate() {
        let th = if i == 1 { theta0 } else { theta1 };
        for (eta, v) in table.iter_mut().enumerate() {
            let (e1, e2) = ((eta & 1) as f64, ((eta >> 1) & 1) as f64);
            let both_i = (eta & 1) == i && ((eta >> 1) & 1) == i;
            *v = e * e1 * (1.0 - e2) + if both_i { e + th } else { 0.0 };
        }
    }
    let [g0, g1] = g;
    (g0, g1)
}

pub fn lv_eps1_inv2(theta0: f64, theta1: f64) -> f64 {
    (-theta0).max(-theta1).max(0.0) + 1.0
}

pub fn build_lv(theta0: f64, theta1: f64, epsilon: f64, k: &Kernel) -> Result<ModelSpec> {
    k.validate()?;
    let e = lv_eps1_inv2(theta0, theta1);
    let e2 = 1.0 / (epsilon * epsilon);
    if !(epsilon > 0.0) || !(e2 > e) {
        return Err(Error::EpsilonTooLarge(epsilon));
    }
    let (g0, g1) = lv_tables(theta0, theta1, e);
    let p = PerturbationSpec::new(independent_pair_law(k), g0, g1, None)?;
    Ok(ModelSpec {
        kernel: k.clone(),
        epsilon,
        voter_rate: e2 - e,
        eps1_inv2: e,
        perturbation: Some(p),
        backend: Backend::Graphical,
        family: Family::Lv { theta0, theta1 },
    })
}

/// Evolutionary game with death-birth updating; direct backend only.
pub fn build_evolution_game(gp: GameParams, k: &Kernel) -> Result<ModelSpec> {
    k.validate()?;
    if !k.is_uniform() {
        return Err(Error::NotUniformKernel);
    }
    let kd = k.len();
    let bound = 1.0 / (2.0 * gp.r_bound(kd));
    if !(gp.w >= 0.0) || gp.w >= bound {
        return Err(Error::SelectionTooStrong { w: gp.w, bound });
    }
    for state in [0u8, 1] {
        for n1 in 0..=kd {
            if fitness(&gp, state, n1, kd - n1) <= 0.0 {
                return Err(Error::NegativeFitness);
            }
        }
    }
    let epsilon = if gp.w > 0.0 { gp.w.sqrt() } else { 1.0 };
    Ok(ModelSpec {
        kernel: k.clone(),
        epsilon,
        voter_rate: 1.0 / (epsilon * epsilon),
        eps1_inv2: 0.0,
        perturbation: None,
        backend: Backend::Direct,
        family: Family::Game(gp),
    })
}

/// Offsets {0} followed by the neighborhood and then the remaining two-step sums.
pub fn game_offsets(k: &Kernel) -> Vec<Vec<i64>> {
    let d = k.dim();
    let mut out: Vec<Vec<i64>> = vec![vec![0; d]];
    for (y, _) in k.atoms() {
        if !out.iter().any(|o| o.as_slice() == y) {
            out.push(y.to_vec());
        }
    }
    for (y, _) in k.atoms() {
        for (z, _) in k.atoms() {
            let s: Vec<i64> = y.iter().zip(z).map(|(a, b)| a + b).collect();
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    out
}

/// Limiting tables h0, h1 = theta_i - f_i phi of the game over [`game_offsets`].
pub fn game_limiting_h(gp: &GameParams, k: &Kernel) -> Result<(Vec<Vec<i64>>, Vec<f64>, Vec<f64>)> {
    let offs = game_offsets(k);
    if offs.len() > 20 {
        return Err(Error::InvalidRates("neighborhood too large for an explicit table"));
    }
    let kd = k.len() as f64;
    let pos = |x: &[i64]| offs.iter().position(|o| o.as_slice() == x).expect("offset listed");
    let nbr: Vec<usize> = k.atoms().map(|(y, _)| pos(y)).collect();
    let pairs: Vec<(usize, usize)> = k
        .atoms()
        .flat_map(|(y, _)| {
            k.atoms().map(move |(z, _)| {
                let s: Vec<i64> = y.iter().zip(z).map(|(a, b)| a + b).collect();
                (y.to_vec(), s)
            })
        })
        .map(|(y, s)| (pos(&y), pos(&s)))
        .collect();
    let n = 1usize << offs.len();
    let mut h0 = vec![0.0; n];
    let mut h1 = vec![0.0; n];
    for eta in 0..n {
        let bit = |j: usize| (eta >> j) & 1;
        let f1 = nbr.iter().filter(|&&j| bit(j) == 1).count() as f64 / kd;
        let f0 = 1.0 - f1;
        let f1_2 = pairs.iter().filter(|&&(a, b)| bit(a) == 1 && bit(b) == 1).count() as f64 / (kd * kd);
        let f0_2 = pairs.iter().filter(|&&(a, b)| bit(a) == 0 && bit(b) == 0).count() as f64 / (kd * kd);
        let th1 = (gp.beta * kd - 1.0) * f1 + kd * (gp.alpha - gp.beta) * f1_2;
        let th0 = (gp.gamma * kd - 1.0) * f0 + kd * (gp.delta - gp.gamma) * f0_2;
        let phi = th0 + th1;
        h1[eta] = th1 - f1 * phi;
        h0[eta] = th0 - f0 * phi;
    }
    Ok((offs, h0, h1))
}

/// Non-negative g-form for perturbations given as tables over fixed offsets
/// y_1 = 0, y_2, ...; returns the spec and the eps1^-2 used.
pub fn gform_from_h(h0: &[f64], h1: &[f64], offsets: &[Vec<i64>], k: &Kernel) -> Result<(PerturbationSpec, f64)> {
    let n0 = offsets.len();
    let d = k.dim();
    if n0 == 0 || offsets[0].iter().any(|&c| c != 0) || offsets.iter().any(|y| y.len() != d) {
        return Err(Error::InvalidRates("offsets must start at the origin"));
    }
    let size = 1usize << n0;
    for t in [h0, h1] {
        if t.len() != size {
            return Err(Error::TableSize { expected: size, got: t.len() });
        }
    }
    let mut py = vec![0.0; n0];
    for (x, w) in k.atoms() {
        let j = offsets.iter().position(|y| y.as_slice() == x).ok_or(Error::KernelNotCovered)?;
        py[j] += to_f64(w);
    }
    let pmin = k.probs().iter().copied().fold(f64::INFINITY, f64::min);
    let m = h0.iter().chain(h1).fold(0.0f64, |a, &v| a.max(-v));
    let e = m / pmin;
    let mut g = [vec![0.0; size], vec![0.0; size]];
    for (i, table) in g.iter_mut().enumerate() {
        let h = if i == 1 { h1 } else { h0 };
        for eta in 0..size {
            let fi: f64 = (0..n0).filter(|&j| (eta >> j) & 1 == i).map(|j| py[j]).sum();
            // rounding can leave -1e-16 at the equality case
            table[eta] = (e * fi + h[eta]).max(0.0);
        }
    }
    let [g0, g1] = g;
    let ys: Vec<Vec<i64>> = offsets.to_vec();
    let q = OffspringLaw::atoms_law(d, n0, &[(ys, Weight::new(1, 1))])?;
    Ok((PerturbationSpec::new(q, g0, g1, None)?, e))
}

/// Nonlinear voter model on the box neighborhood; `a` lists a(1..4) or a(0..4).
pub fn build_nlv(a: &[f64], d: usize, l: i64, lambda: f64, epsilon: f64) -> Result<ModelSpec> {
    let a5: [f64; 5] = match a.len() {
        4 => [0.0, a[0], a[1], a[2], a[3]],
        5 => [a[0], a[1], a[2], a[3], a[4]],
        _ => return Err(Error::InvalidRates("need four rates a(1..4)")),
    };
    if a5[0] != 0.0 {
        return Err(Error::InvalidRates("a(0) must be 0"));
    }
    if a5.iter().any(|&v| !(v >= 0.0)) || !(lambda >= 0.0) {
        return Err(Error::InvalidRates("rates must be non-negative"));
    }
    if lambda > 0.0 && a5.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidRates("tilt needs some positive rate"));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::EpsilonTooLarge(epsilon));
    }
    let k = box_kernel(d, l);
    let q = OffspringLaw::without_replacement(&box_points(d, l), 4)?;
    let mut g0 = vec![0.0; 16];
    let mut g1 = vec![0.0; 16];
    for eta in 0..16usize {
        let s = (eta as u32).count_ones() as usize;
        g1[eta] = (1.0 + lambda) * a5[s];
        g0[eta] = a5[4 - s];
    }
    let p = PerturbationSpec::new(q, g0, g1, None)?;
    Ok(ModelSpec {
        kernel: k,
        epsilon,
        voter_rate: 1.0 / (epsilon * epsilon),
        eps1_inv2: 0.0,
        perturbation: Some(p),
        backend: Backend::Graphical,
        family: Family::Nlv { a: a5, lambda },
    })
}
