//! Explicit solvers for u_t = (sigma^2/2) Laplacian u + f(u) and front speeds.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::reaction::ReactionPolynomial;

const ODE_TOL: f64 = 1e-9;
const PDE_TOL: f64 = 1e-6;

/// Horner coefficients, lowest degree first.
#[derive(Clone, Debug)]
struct Poly(Vec<f64>);

impl Poly {
    fn of(f: &ReactionPolynomial) -> Poly {
        let n = f.degree().map_or(1, |d| d + 1);
        Poly(f.coeffs_f64(n))
    }

    #[inline]
    fn eval(&self, u: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }

    #[inline]
    fn rk4(&self, u: f64, h: f64) -> f64 {
        let k1 = self.eval(u);
        let k2 = self.eval(u + 0.5 * h * k1);
        let k3 = self.eval(u + 0.5 * h * k2);
        let k4 = self.eval(u + h * k3);
        u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    }
}

fn check_unit(u: f64, tol: f64) -> Result<()> {
    if (-tol..=1.0 + tol).contains(&u) {
        Ok(())
    } else {
        Err(Error::LeftUnitInterval(u))
    }
}

fn steps(t: f64, dt: f64) -> (usize, f64) {
    if t <= 0.0 {
        return (0, 0.0);
    }
    let n = libm::ceil(t / dt).max(1.0) as usize;
    (n, t / n as f64)
}

/// RK4 solution of u' = f(u) at time t, using ceil(t/dt) equal steps.
pub fn solve_ode(f: &ReactionPolynomial, u0: f64, t: f64, dt: f64) -> Result<f64> {
    check_unit(u0, ODE_TOL)?;
    let p = Poly::of(f);
    let (n, h) = steps(t, dt);
    let mut u = u0;
    for _ in 0..n {
        u = p.rk4(u, h);
        check_unit(u, ODE_TOL)?;
    }
    Ok(u)
}

/// Values at each of the increasing `times`.
pub fn solve_ode_path(f: &ReactionPolynomial, u0: f64, times: &[f64], dt: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(times.len());
    let (mut u, mut t0) = (u0, 0.0);
    for &t in times {
        u = solve_ode(f, u, t - t0, dt)?;
        t0 = t;
        out.push(u);
    }
    Ok(out)
}

/// Cell-centered grid on [x_min, x_max] with zero-flux ends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub dt: f64,
    pub sigma2: f64,
}

pub const CFL_MARGIN: f64 = 0.9;

impl Grid1D {
    /// Time step set to the margin times the stability bound.
    pub fn new(x_min: f64, x_max: f64, dx: f64, sigma2: f64) -> Grid1D {
        let mut g = Grid1D { x_min, x_max, dx, dt: 0.0, sigma2 };
        g.dt = CFL_MARGIN * g.dt_bound();
        g
    }

    /// Symmetric grid sized for a front moving at up to `speed` for time `t`.
    pub fn for_speed(speed: f64, t: f64, dx: f64, sigma2: f64) -> Grid1D {
        let half = 3.0 * speed.abs() * t + 50.0 * dx;
        Grid1D::new(-half, half, dx, sigma2)
    }

    pub fn dt_bound(&self) -> f64 {
        0.5 * self.dx * self.dx / self.sigma2
    }

    pub fn cells(&self) -> usize {
        libm::round((self.x_max - self.x_min) / self.dx) as usize
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx
    }

    fn check(&self, bound: f64) -> Result<()> {
        if !(self.dx > 0.0) || !(self.sigma2 > 0.0) || self.cells() < 2 {
            return Err(Error::CFLViolation { dt: self.dt, bound });
        }
        if !(self.dt > 0.0) || self.dt > bound {
            return Err(Error::CFLViolation { dt: self.dt, bound });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RdSolution {
    pub t: f64,
    pub u: Vec<f64>,
    pub frames: Vec<(f64, Vec<f64>)>,
}

/// One explicit diffusion step followed by an RK4 reaction step.
fn step_1d(u: &mut [f64], scratch: &mut [f64], r: f64, p: &Poly, h: f64) {
    let n = u.len();
    scratch.copy_from_slice(u);
    for i in 0..n {
        let l = scratch[if i == 0 { 0 } else { i - 1 }];
        let rr = scratch[if i + 1 == n { n - 1 } else { i + 1 }];
        u[i] = p.rk4(scratch[i] + r * (l - 2.0 * scratch[i] + rr), h);
    }
}

/// Solve on `grid` from cell values `v` to time `t`. Frames are kept every
/// `frame_every` time units when given.
pub fn solve_rd_1d(f: &ReactionPolynomial, v: &[f64], t: f64, grid: &Grid1D, frame_every: Option<f64>) -> Result<RdSolution> {
    grid.check(grid.dt_bound())?;
    if v.len() != grid.cells() {
        return Err(Error::TableSize { expected: grid.cells(), got: v.len() });
    }
    for &x in v {
        check_unit(x, PDE_TOL)?;
    }
    let p = Poly::of(f);
    let (n, h) = steps(t, grid.dt);
    let r = 0.5 * grid.sigma2 * h / (grid.dx * grid.dx);
    let mut u = v.to_vec();
    let mut scratch = vec![0.0; u.len()];
    let mut frames = Vec::new();
    let mut next_frame = 0.0;
    for s in 0..=n {
        let now = s as f64 * h;
        if let Some(every) = frame_every {
            if now + 1e-12 >= next_frame {
                frames.push((now, u.clone()));
                next_frame += every;
            }
        }
        if s == n {
            break;
        }
        step_1d(&mut u, &mut scratch, r, &p, h);
    }
    if let Some(&bad) = u.iter().find(|&&x| check_unit(x, PDE_TOL).is_err()) {
        return Err(Error::LeftUnitInterval(bad));
    }
    Ok(RdSolution { t, u, frames })
}

/// Radial grid r_i = i dr, i = 0..=n, for dimension `d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialGrid {
    pub r_max: f64,
    pub dr: f64,
    pub dt: f64,
    pub sigma2: f64,
    pub d: usize,
}

impl RadialGrid {
    pub fn new(r_max: f64, dr: f64, sigma2: f64, d: usize) -> RadialGrid {
        let mut g = RadialGrid { r_max, dr, dt: 0.0, sigma2, d };
        g.dt = CFL_MARGIN * g.dt_bound();
        g
    }

    /// The origin stencil has weight d sigma^2 dt / dr^2 on its neighbor.
    pub fn dt_bound(&self) -> f64 {
        let h2 = self.dr * self.dr;
        (0.5 * h2 / self.sigma2).min(h2 / (self.d.max(1) as f64 * self.sigma2))
    }

    pub fn points(&self) -> usize {
        libm::round(self.r_max / self.dr) as usize + 1
    }

    pub fn r(&self, i: usize) -> f64 {
        i as f64 * self.dr
    }
}

/// Radially symmetric solve: u_t = sigma^2/2 (u_rr + (d-1)/r u_r) + f(u).
pub fn solve_rd_radial(f: &ReactionPolynomial, v: &[f64], t: f64, grid: &RadialGrid, frame_every: Option<f64>) -> Result<RdSolution> {
    let bound = grid.dt_bound();
    if grid.d == 0 || !(grid.dr > 0.0) || !(grid.dt > 0.0) || grid.dt > bound || grid.points() < 3 {
        return Err(Error::CFLViolation { dt: grid.dt, bound });
    }
    let n = grid.points();
    if v.len() != n {
        return Err(Error::TableSize { expected: n, got: v.len() });
    }
    let p = Poly::of(f);
    let (ns, h) = steps(t, grid.dt);
    let c = 0.5 * grid.sigma2 * h / (grid.dr * grid.dr);
    let dm1 = grid.d as f64 - 1.0;
    let mut u = v.to_vec();
    let mut old = vec![0.0; n];
    let mut frames = Vec::new();
    let mut next_frame = 0.0;
    for s in 0..=ns {
        let now = s as f64 * h;
        if let Some(every) = frame_every {
            if now + 1e-12 >= next_frame {
                frames.push((now, u.clone()));
                next_frame += every;
            }
        }
        if s == ns {
            break;
        }
        old.copy_from_slice(&u);
        u[0] = p.rk4(old[0] + c * grid.d as f64 * 2.0 * (old[1] - old[0]), h);
        for i in 1..n {
            let up = if i + 1 == n { old[n - 2] } else { old[i + 1] };
            let lap = up - 2.0 * old[i] + old[i - 1] + dm1 / (2.0 * i as f64) * (up - old[i - 1]);
            u[i] = p.rk4(old[i] + c * lap, h);
        }
    }
    if let Some(&bad) = u.iter().find(|&&x| check_unit(x, PDE_TOL).is_err()) {
        return Err(Error::LeftUnitInterval(bad));
    }
    Ok(RdSolution { t, u, frames })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveSpeed {
    pub speed: f64,
    /// Sign of the integral of f over [0,1].
    pub integral_sign: i8,
    /// (t, front position) samples.
    pub track: Vec<(f64, f64)>,
}

/// Leftmost crossing of `level` going down, by linear interpolation.
pub fn front_position(u: &[f64], grid: &Grid1D, level: f64) -> Option<f64> {
    (0..u.len() - 1).find(|&i| u[i] >= level && u[i + 1] < level).map(|i| {
        let frac = (u[i] - level) / (u[i] - u[i + 1]);
        grid.x(i) + frac * grid.dx
    })
}

/// Speed of the front grown from step data (1 left of 0, 0 right of it),
/// tracked at `level`, fitted by least squares over the final third.
pub fn wave_speed(f: &ReactionPolynomial, grid: &Grid1D, t: f64, level: f64) -> Result<WaveSpeed> {
    grid.check(grid.dt_bound())?;
    let n = grid.cells();
    let p = Poly::of(f);
    let (ns, h) = steps(t, grid.dt);
    let r = 0.5 * grid.sigma2 * h / (grid.dx * grid.dx);
    let mut u: Vec<f64> = (0..n).map(|i| if grid.x(i) < 0.0 { 1.0 } else { 0.0 }).collect();
    let mut scratch = vec![0.0; n];
    let sample_every = (ns / 600).max(1);
    let margin = 10.0 * grid.dx;
    let mut track = Vec::new();
    for s in 1..=ns {
        step_1d(&mut u, &mut scratch, r, &p, h);
        if s % sample_every == 0 || s == ns {
            let now = s as f64 * h;
            let Some(x) = front_position(&u, grid, level) else {
                return Err(Error::NoFront);
            };
            if x - grid.x_min < margin || grid.x_max - x < margin {
                return Err(Error::BoundaryContamination(now));
            }
            track.push((now, x));
        }
    }
    let tail: Vec<(f64, f64)> = track.iter().copied().filter(|&(s, _)| s >= 2.0 * t / 3.0).collect();
    if tail.len() < 2 {
        return Err(Error::NoFront);
    }
    let m = tail.len() as f64;
    let (st, sx) = tail.iter().fold((0.0, 0.0), |a, &(s, x)| (a.0 + s, a.1 + x));
    let (mt, mx) = (st / m, sx / m);
    let (num, den) = tail.iter().fold((0.0, 0.0), |a, &(s, x)| (a.0 + (s - mt) * (x - mx), a.1 + (s - mt) * (s - mt)));
    let integral = f.integral01();
    let integral_sign = if integral > 0.0 {
        1
    } else if integral < 0.0 {
        -1
    } else {
        0
    };
    Ok(WaveSpeed { speed: num / den, integral_sign, track })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reaction::Provenance;
    use proptest::prelude::*;

    fn poly(c: &[f64]) -> ReactionPolynomial {
        ReactionPolynomial::from_f64(c, Provenance::Inline)
    }

    fn logistic() -> ReactionPolynomial {
        poly(&[0.0, 1.0, -1.0])
    }

    /// u(1-u)(u-a) scaled by s.
    fn cubic(a: f64, s: f64) -> ReactionPolynomial {
        poly(&[0.0, -a * s, (1.0 + a) * s, -s])
    }

    #[test]
    fn ode_examples() {
        assert_eq!(solve_ode(&poly(&[0.0]), 0.3, 2.0, 0.01).unwrap(), 0.3);
        let e = core::f64::consts::E;
        let u = solve_ode(&logistic(), 0.2, 1.0, 0.01).unwrap();
        assert!((u - e / (4.0 + e)).abs() < 1e-9, "{u}");
        let sym = poly(&[0.0, 1.0, -3.0, 2.0]);
        assert_eq!(solve_ode(&sym, 0.5, 7.0, 0.01).unwrap(), 0.5);
        assert!(matches!(solve_ode(&logistic(), 1.5, 1.0, 0.1), Err(Error::LeftUnitInterval(_))));
        assert!(matches!(solve_ode(&poly(&[1.0]), 0.9, 1.0, 0.1), Err(Error::LeftUnitInterval(_))));
        let path = solve_ode_path(&logistic(), 0.2, &[0.5, 1.0], 0.01).unwrap();
        assert!((path[1] - u).abs() < 1e-12);
    }

    #[test]
    fn constant_data_follow_the_ode() {
        let g = Grid1D::new(-5.0, 5.0, 0.1, 1.0);
        let f = cubic(0.3, 2.0);
        let sol = solve_rd_1d(&f, &vec![0.42; g.cells()], 1.5, &g, None).unwrap();
        let ode = solve_ode(&f, 0.42, 1.5, g.dt).unwrap();
        assert!(sol.u.iter().all(|&u| (u - ode).abs() < 1e-9));
        let rg = RadialGrid::new(5.0, 0.1, 1.0, 3);
        let sol = solve_rd_radial(&poly(&[0.0]), &vec![0.7; rg.points()], 1.0, &rg, None).unwrap();
        assert!(sol.u.iter().all(|&u| (u - 0.7).abs() < 1e-12));
    }

    #[test]
    fn heat_equation_conserves_mass() {
        let g = Grid1D::new(-10.0, 10.0, 0.1, 1.5);
        let v: Vec<f64> = (0..g.cells()).map(|i| if g.x(i).abs() < 1.0 { 1.0 } else { 0.0 }).collect();
        let m0: f64 = v.iter().sum::<f64>() * g.dx;
        let sol = solve_rd_1d(&poly(&[0.0]), &v, 5.0, &g, Some(1.0)).unwrap();
        let m1: f64 = sol.u.iter().sum::<f64>() * g.dx;
        assert!((m1 - m0).abs() < 1e-8);
        assert_eq!(sol.frames.len(), 6);
    }

    #[test]
    fn cfl_is_enforced() {
        let mut g = Grid1D::new(-1.0, 1.0, 0.1, 1.0);
        g.dt = 0.0051;
        assert!(matches!(solve_rd_1d(&logistic(), &vec![0.0; g.cells()], 1.0, &g, None), Err(Error::CFLViolation { .. })));
        let mut rg = RadialGrid::new(2.0, 0.1, 1.0, 3);
        rg.dt = 0.004;
        assert!(matches!(solve_rd_radial(&logistic(), &vec![0.0; rg.points()], 1.0, &rg, None), Err(Error::CFLViolation { .. })));
    }

    #[test]
    fn grid_refinement_is_second_order() {
        let f = cubic(0.3, 1.0);
        let run = |dx: f64| {
            let g = Grid1D::new(-8.0, 8.0, dx, 1.0);
            let v: Vec<f64> = (0..g.cells()).map(|i| 0.5 + 0.4 * libm::cos(g.x(i) * 0.7)).collect();
            solve_rd_1d(&f, &v, 1.0, &g, None).unwrap().u
        };
        let (a, b, c) = (run(0.2), run(0.1), run(0.05));
        let coarsen = |fine: &[f64]| fine.chunks(2).map(|w| 0.5 * (w[0] + w[1])).collect::<Vec<f64>>();
        let err = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let e1 = err(&a, &coarsen(&b));
        let e2 = err(&b, &coarsen(&c));
        let order = libm::log2(e1 / e2);
        assert!(order >= 1.8, "{order}");
    }

    #[test]
    fn kpp_front_speed() {
        let g = Grid1D::new(-60.0, 60.0, 0.1, 1.0);
        let w = wave_speed(&logistic(), &g, 30.0, 0.5).unwrap();
        let target = libm::sqrt(2.0);
        assert!((w.speed - target).abs() < 0.05 * target + 0.03, "{}", w.speed);
        assert_eq!(w.integral_sign, 1);
    }

    #[test]
    fn bistable_front_speed() {
        let g = Grid1D::new(-40.0, 40.0, 0.1, 2.0);
        let w = wave_speed(&cubic(0.4, 1.0), &g, 40.0, 0.5).unwrap();
        let target = 0.2 / libm::sqrt(2.0);
        assert!((w.speed - target).abs() < 0.05 * target, "{}", w.speed);
        let w = wave_speed(&cubic(0.5, 3.0), &g, 20.0, 0.5).unwrap();
        assert!(w.speed.abs() < 0.02);
    }

    #[test]
    fn front_guards() {
        let g = Grid1D::new(-3.0, 3.0, 0.1, 1.0);
        assert!(matches!(wave_speed(&logistic(), &g, 10.0, 0.5), Err(Error::BoundaryContamination(_))));
        // fully absorbing: everything decays to 0
        let g = Grid1D::new(-30.0, 30.0, 0.1, 1.0);
        assert_eq!(wave_speed(&poly(&[0.0, -1.0]), &g, 10.0, 0.5), Err(Error::NoFront));
    }

    #[test]
    fn radial_decay_and_spread() {
        let rg = RadialGrid::new(30.0, 0.2, 1.0, 3);
        let bump: Vec<f64> = (0..rg.points()).map(|i| if rg.r(i) < 3.0 { 0.5 } else { 0.0 }).collect();
        let decay = poly(&[0.0, -1.0, 1.0]); // -u(1-u)
        let sol = solve_rd_radial(&decay, &bump, 6.0, &rg, Some(1.0)).unwrap();
        let sups: Vec<(f64, f64)> = sol.frames.iter().skip(1).map(|(t, u)| (*t, libm::log(u.iter().cloned().fold(0.0, f64::max)))).collect();
        let m = sups.len() as f64;
        let (mt, ml) = sups.iter().fold((0.0, 0.0), |a, &(t, l)| (a.0 + t / m, a.1 + l / m));
        let slope = sups.iter().map(|&(t, l)| (t - mt) * (l - ml)).sum::<f64>() / sups.iter().map(|&(t, _)| (t - mt) * (t - mt)).sum::<f64>();
        assert!(slope < -0.5, "{slope}");

        let rg = RadialGrid::new(40.0, 0.2, 1.0, 3);
        let small: Vec<f64> = (0..rg.points()).map(|i| if rg.r(i) < 2.0 { 0.3 } else { 0.0 }).collect();
        let t = 20.0;
        let sol = solve_rd_radial(&logistic(), &small, t, &rg, None).unwrap();
        let inner = (0..rg.points()).filter(|&i| rg.r(i) <= 0.5 * t).map(|i| sol.u[i]).fold(1.0, f64::min);
        assert!(inner > 0.9, "{inner}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn comparison_principle(seed in any::<u64>(), a in 0.1f64..0.9) {
            let mut s = crate::rng::Stream::new(seed, &[0]);
            let g = Grid1D::new(-5.0, 5.0, 0.1, 1.0);
            let lo: Vec<f64> = (0..g.cells()).map(|_| s.uniform()).collect();
            let hi: Vec<f64> = lo.iter().map(|&x| x + (1.0 - x) * s.uniform()).collect();
            let f = cubic(a, 2.0);
            let ul = solve_rd_1d(&f, &lo, 1.0, &g, None).unwrap().u;
            let uh = solve_rd_1d(&f, &hi, 1.0, &g, None).unwrap().u;
            prop_assert!(ul.iter().zip(&uh).all(|(p, q)| *p <= q + 1e-8));
        }

        #[test]
        fn speed_sign_follows_the_integral(a in 0.05f64..0.95, s in 0.5f64..3.0) {
            let f = cubic(a, s);
            prop_assume!(f.integral01().abs() > 0.01);
            let g = Grid1D::new(-25.0, 25.0, 0.2, 1.0);
            let w = wave_speed(&f, &g, 12.0, 0.5).unwrap();
            prop_assert_eq!(w.speed > 0.0, w.integral_sign > 0);
        }
    }
}
