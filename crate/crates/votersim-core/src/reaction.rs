//! Reaction polynomials: exact closed forms for the Lotka-Volterra, game and
//! nonlinear voter families, root isolation on (0,1) and phase classifiers.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::model::GameParams;

pub type Q = BigRational;

/// Exact rational value of a finite float.
pub fn q(x: f64) -> Q {
    BigRational::from_float(x).expect("finite coefficient")
}

pub fn qi(n: i64) -> Q {
    BigRational::from_integer(BigInt::from(n))
}

pub fn qr(n: i64, d: i64) -> Q {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn q_to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    ClosedForm(&'static str),
    MonteCarlo { n: u64, cutoff: f64 },
    Inline,
}

/// f(u) = sum c_i u^i.
#[derive(Clone, Debug, PartialEq)]
pub struct ReactionPolynomial {
    coeffs: Vec<Q>,
    approx: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    pub provenance: Provenance,
}

impl ReactionPolynomial {
    pub fn new(mut coeffs: Vec<Q>, provenance: Provenance) -> Self {
        trim(&mut coeffs);
        let approx = coeffs.iter().map(q_to_f64).collect();
        ReactionPolynomial { coeffs, approx, stderr: None, provenance }
    }

    pub fn from_f64(c: &[f64], provenance: Provenance) -> Self {
        Self::new(c.iter().map(|&x| q(x)).collect(), provenance)
    }

    pub fn zero() -> Self {
        Self::new(Vec::new(), Provenance::Inline)
    }

    pub fn with_stderr(mut self, se: Vec<f64>) -> Self {
        self.stderr = Some(se);
        self
    }

    pub fn coeffs(&self) -> &[Q] {
        &self.coeffs
    }

    /// Coefficients as floats, padded with zeros to `len`.
    pub fn coeffs_f64(&self, len: usize) -> Vec<f64> {
        let mut v = self.approx.clone();
        v.resize(len.max(v.len()), 0.0);
        v
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.approx.iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }

    pub fn eval_exact(&self, u: &Q) -> Q {
        peval(&self.coeffs, u)
    }

    pub fn derivative(&self) -> Self {
        Self::new(pderiv(&self.coeffs), self.provenance.clone())
    }

    pub fn definite_integral(&self, a: &Q, b: &Q) -> Q {
        let anti = pinteg(&self.coeffs);
        peval(&anti, b) - peval(&anti, a)
    }

    pub fn integral01(&self) -> f64 {
        q_to_f64(&self.definite_integral(&Q::zero(), &Q::one()))
    }

    /// Distinct roots in the open interval (0,1), sorted, each located to
    /// within `tol`.
    pub fn roots_in_unit_interval(&self, tol: f64) -> Result<Vec<f64>> {
        if self.is_zero() {
            return Err(Error::IdenticallyZero);
        }
        let g = pgcd(&self.coeffs, &pderiv(&self.coeffs));
        if g.len() > 1 {
            let g_roots = sqfree_roots(&squarefree(&g), tol);
            if let Some(&r) = g_roots.first() {
                return Err(Error::NonSimpleRoot(r));
            }
        }
        Ok(sqfree_roots(&squarefree(&self.coeffs), tol))
    }

    fn combine(&self, other: &Self, sign: i64) -> Self {
        let c = if sign > 0 { padd(&self.coeffs, &other.coeffs) } else { psub(&self.coeffs, &other.coeffs) };
        Self::new(c, Provenance::Inline)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, 1)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.combine(other, -1)
    }

    pub fn scale(&self, s: &Q) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect(), self.provenance.clone())
    }
}

fn trim(p: &mut Vec<Q>) {
    while p.last().is_some_and(|c| c.is_zero()) {
        p.pop();
    }
}

fn peval(p: &[Q], x: &Q) -> Q {
    p.iter().rev().fold(Q::zero(), |acc, c| acc * x + c)
}

fn pderiv(p: &[Q]) -> Vec<Q> {
    let mut d: Vec<Q> = p.iter().enumerate().skip(1).map(|(i, c)| c * qi(i as i64)).collect();
    trim(&mut d);
    d
}

fn pinteg(p: &[Q]) -> Vec<Q> {
    let mut out = vec![Q::zero()];
    out.extend(p.iter().enumerate().map(|(i, c)| c / qi(i as i64 + 1)));
    out
}

fn padd(a: &[Q], b: &[Q]) -> Vec<Q> {
    let n = a.len().max(b.len());
    let mut out: Vec<Q> = (0..n)
        .map(|i| a.get(i).cloned().unwrap_or_else(Q::zero) + b.get(i).cloned().unwrap_or_else(Q::zero))
        .collect();
    trim(&mut out);
    out
}

fn psub(a: &[Q], b: &[Q]) -> Vec<Q> {
    let nb: Vec<Q> = b.iter().map(|c| -c.clone()).collect();
    padd(a, &nb)
}

fn pmul(a: &[Q], b: &[Q]) -> Vec<Q> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Q::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    trim(&mut out);
    out
}

/// Quotient and remainder; `b` must be nonzero.
fn pdivrem(a: &[Q], b: &[Q]) -> (Vec<Q>, Vec<Q>) {
    let mut r: Vec<Q> = a.to_vec();
    trim(&mut r);
    let db = b.len() - 1;
    let lead = b[db].clone();
    if r.len() < b.len() {
        return (Vec::new(), r);
    }
    let mut quo = vec![Q::zero(); r.len() - db];
    while r.len() >= b.len() {
        let shift = r.len() - b.len();
        let c = r.last().unwrap() / &lead;
        for (j, bj) in b.iter().enumerate() {
            r[shift + j] -= &c * bj;
        }
        quo[shift] = c;
        r.pop();
        trim(&mut r);
    }
    trim(&mut quo);
    (quo, r)
}

/// Monic gcd.
fn pgcd(a: &[Q], b: &[Q]) -> Vec<Q> {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    trim(&mut x);
    trim(&mut y);
    while !y.is_empty() {
        let (_, r) = pdivrem(&x, &y);
        x = y;
        y = r;
    }
    if let Some(l) = x.last().cloned() {
        for c in x.iter_mut() {
            *c /= &l;
        }
    }
    x
}

fn squarefree(p: &[Q]) -> Vec<Q> {
    let g = pgcd(p, &pderiv(p));
    if g.len() <= 1 {
        return p.to_vec();
    }
    pdivrem(p, &g).0
}

fn sturm_chain(p: &[Q]) -> Vec<Vec<Q>> {
    let mut chain = vec![p.to_vec(), pderiv(p)];
    loop {
        let n = chain.len();
        if chain[n - 1].is_empty() {
            chain.pop();
            break;
        }
        let (_, r) = pdivrem(&chain[n - 2], &chain[n - 1]);
        if r.is_empty() {
            break;
        }
        chain.push(r.into_iter().map(|c| -c).collect());
    }
    chain
}

fn variations(chain: &[Vec<Q>], x: &Q) -> usize {
    let mut last = 0i8;
    let mut v = 0;
    for p in chain {
        let s = peval(p, x);
        let sg = if s.is_positive() { 1 } else if s.is_negative() { -1 } else { 0 };
        if sg != 0 {
            if last != 0 && sg != last {
                v += 1;
            }
            last = sg;
        }
    }
    v
}

fn sign(p: &[Q], x: &Q) -> i8 {
    let s = peval(p, x);
    if s.is_positive() {
        1
    } else if s.is_negative() {
        -1
    } else {
        0
    }
}

/// Roots of a square-free polynomial in (0,1).
fn sqfree_roots(p: &[Q], tol: f64) -> Vec<f64> {
    if p.len() <= 1 {
        return Vec::new();
    }
    let chain = sturm_chain(p);
    let tolq = q(tol.max(1e-300));
    let two = qi(2);
    let mut out = Vec::new();
    // intervals (a, b] with their root counts
    let mut stack = vec![(Q::zero(), Q::one())];
    while let Some((a, b)) = stack.pop() {
        let mut count = variations(&chain, &a) - variations(&chain, &b);
        let b_root = sign(p, &b) == 0;
        if b_root && b.is_one() {
            count -= 1;
            if count == 0 {
                continue;
            }
            // shrink away from the excluded endpoint
            let m = (&a + &b) / &two;
            stack.push((m.clone(), b.clone()));
            stack.push((a, m));
            continue;
        }
        match count {
            0 => {}
            1 if b_root => out.push(q_to_f64(&b)),
            1 => {
                let (mut lo, mut hi) = (a, b);
                let sb = sign(p, &hi);
                let mut exact = None;
                while &hi - &lo > tolq {
                    let m = (&lo + &hi) / &two;
                    let sm = sign(p, &m);
                    if sm == 0 {
                        exact = Some(m);
                        break;
                    }
                    if sm == sb {
                        hi = m;
                    } else {
                        lo = m;
                    }
                }
                out.push(match exact {
                    Some(m) => q_to_f64(&m),
                    None => q_to_f64(&((lo + hi) / &two)),
                });
            }
            _ => {
                let m = (&a + &b) / &two;
                stack.push((m.clone(), b));
                stack.push((a, m));
            }
        }
    }
    out.sort_by(|x, y| x.partial_cmp(y).unwrap());
    out
}

/// Coefficients of u^i (1-u)^j.
fn bern(i: usize, j: usize) -> Vec<Q> {
    let mut p = vec![Q::one()];
    for _ in 0..i {
        p = pmul(&p, &[Q::zero(), Q::one()]);
    }
    for _ in 0..j {
        p = pmul(&p, &[Q::one(), -Q::one()]);
    }
    p
}

fn lin(terms: &[(Q, Vec<Q>)]) -> Vec<Q> {
    let mut acc = Vec::new();
    for (c, p) in terms {
        let s: Vec<Q> = p.iter().map(|x| x * c).collect();
        acc = padd(&acc, &s);
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhaseLabel {
    R1,
    R2,
    R3,
    R4,
    R5,
    Cooperators,
    Defectors,
    Case1,
    Case2,
    Case3,
    Case4A,
    Case4B,
    Boundary,
}

impl PhaseLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseLabel::R1 => "R1",
            PhaseLabel::R2 => "R2",
            PhaseLabel::R3 => "R3",
            PhaseLabel::R4 => "R4",
            PhaseLabel::R5 => "R5",
            PhaseLabel::Cooperators => "cooperators",
            PhaseLabel::Defectors => "defectors",
            PhaseLabel::Case1 => "case1",
            PhaseLabel::Case2 => "case2",
            PhaseLabel::Case3 => "case3",
            PhaseLabel::Case4A => "case4A",
            PhaseLabel::Case4B => "case4B",
            PhaseLabel::Boundary => "boundary",
        }
    }
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const TOL: f64 = 1e-9;

fn fsign(x: f64) -> i8 {
    if x > TOL {
        1
    } else if x < -TOL {
        -1
    } else {
        0
    }
}

fn qsign(x: &Q) -> i8 {
    if x.is_positive() {
        1
    } else if x.is_negative() {
        -1
    } else {
        0
    }
}

// ---- Lotka-Volterra ----

/// u(1-u)[theta0 p2 - theta1 (p2+p3) + u p3 (theta0+theta1)].
pub fn lv_f(theta0: f64, theta1: f64, p2: f64, p3: f64) -> ReactionPolynomial {
    lv_f_exact(&q(theta0), &q(theta1), &q(p2), &q(p3))
}

pub fn lv_f_exact(theta0: &Q, theta1: &Q, p2: &Q, p3: &Q) -> ReactionPolynomial {
    let a = theta0 * p2 - theta1 * (p2 + p3);
    let b = p3 * (theta0 + theta1);
    let c = lin(&[(a, bern(1, 1)), (b, bern(2, 1))]);
    ReactionPolynomial::new(c, Provenance::ClosedForm("lotka-volterra"))
}

/// Interior zero of the LV reaction polynomial, when it lies in (0,1).
pub fn lv_ustar(theta0: f64, theta1: f64, p2: f64, p3: f64) -> Result<Option<f64>> {
    let a = theta0 * p2 - theta1 * (p2 + p3);
    let s = theta0 + theta1;
    if s == 0.0 {
        return Err(if a == 0.0 { Error::IdenticallyZero } else { Error::DegenerateSum });
    }
    let u = (theta1 * (p2 + p3) - theta0 * p2) / (p3 * s);
    Ok(if u > 0.0 && u < 1.0 { Some(u) } else { None })
}

pub fn lv_m0(p2: f64, p3: f64) -> f64 {
    p2 / (p2 + p3)
}

fn lv_label(l0: i8, l1: i8, d: i8) -> PhaseLabel {
    match (l0, l1) {
        (1, -1) => PhaseLabel::R1,
        (-1, -1) => PhaseLabel::R2,
        (1, 1) => PhaseLabel::R3,
        (-1, 1) => match d {
            1 => PhaseLabel::R5,
            -1 => PhaseLabel::R4,
            _ => PhaseLabel::Boundary,
        },
        _ => PhaseLabel::Boundary,
    }
}

/// Sector of (theta0, theta1) given m0 in (0,1). The sign of f near 0 is that
/// of m0 theta0 - theta1, near 1 that of theta0 - m0 theta1, and on the
/// bistable sectors the sign of the integral of f is that of theta0 - theta1.
pub fn lv_phase(theta0: f64, theta1: f64, m0: f64) -> PhaseLabel {
    lv_label(fsign(m0 * theta0 - theta1), fsign(theta0 - m0 * theta1), fsign(theta0 - theta1))
}

pub fn lv_phase_exact(theta0: &Q, theta1: &Q, m0: &Q) -> PhaseLabel {
    lv_label(
        qsign(&(m0 * theta0 - theta1)),
        qsign(&(theta0 - m0 * theta1)),
        qsign(&(theta0 - theta1)),
    )
}

// ---- evolutionary game ----

/// k [(beta-delta) + (gamma-delta)/k] p01 u(1-u)
///   + k [(alpha-beta) - (gamma-delta)] u(1-u)(p122 + u p123).
pub fn coop_f(gp: &GameParams, k_deg: usize, p01: f64, p122: f64, p123: f64) -> ReactionPolynomial {
    let k = qi(k_deg as i64);
    let (al, be, ga, de) = (q(gp.alpha), q(gp.beta), q(gp.gamma), q(gp.delta));
    let quad = (&be - &de + (&ga - &de) / &k) * q(p01) * &k;
    let cub = ((&al - &be) - (&ga - &de)) * &k;
    let c = lin(&[
        (quad, bern(1, 1)),
        (&cub * q(p122), bern(1, 1)),
        (&cub * q(p123), bern(2, 1)),
    ]);
    ReactionPolynomial::new(c, Provenance::ClosedForm("evolutionary-game"))
}

/// Cooperators iff b/c > k.
pub fn coop_rule(b: f64, c: f64, k_deg: usize) -> PhaseLabel {
    match qsign(&(q(b) - q(c) * qi(k_deg as i64))) {
        1 => PhaseLabel::Cooperators,
        -1 => PhaseLabel::Defectors,
        _ => PhaseLabel::Boundary,
    }
}

// ---- nonlinear voter ----

/// (b1, b2) = (4a(1) - a(4), 6a(2) - 4a(3)) for rates a(1..4).
pub fn nlv_b(a: &[Q; 4]) -> (Q, Q) {
    (qi(4) * &a[0] - &a[3], qi(6) * &a[1] - qi(4) * &a[2])
}

pub fn nlv_f1_from_b(b1: &Q, b2: &Q) -> ReactionPolynomial {
    let c = lin(&[
        (b1.clone(), bern(1, 4)),
        (b2.clone(), bern(2, 3)),
        (-b2.clone(), bern(3, 2)),
        (-b1.clone(), bern(4, 1)),
    ]);
    ReactionPolynomial::new(c, Provenance::ClosedForm("nonlinear-voter"))
}

/// Limit quintic f1 with its (b1, b2).
pub fn nlv_f1(a: &[f64; 4]) -> (ReactionPolynomial, Q, Q) {
    let aq = [q(a[0]), q(a[1]), q(a[2]), q(a[3])];
    let (b1, b2) = nlv_b(&aq);
    (nlv_f1_from_b(&b1, &b2), b1, b2)
}

/// Tilted quintic f_{1,lambda}.
pub fn nlv_flambda(a: &[f64; 4], lambda: f64) -> ReactionPolynomial {
    let aq = [q(a[0]), q(a[1]), q(a[2]), q(a[3])];
    let (b1, b2) = nlv_b(&aq);
    let l = q(lambda);
    let c = lin(&[
        (&b1 + qi(4) * &l * &aq[0], bern(1, 4)),
        (&b2 + qi(6) * &l * &aq[1], bern(2, 3)),
        (-(&b2 - qi(4) * &l * &aq[2]), bern(3, 2)),
        (-(&b1 - &l * &aq[3]), bern(4, 1)),
    ]);
    ReactionPolynomial::new(c, Provenance::ClosedForm("nonlinear-voter-tilted"))
}

fn nlv_label(s_b1: i8, s_3: i8, s_5: i8) -> PhaseLabel {
    match (s_b1, s_3) {
        (0, _) | (_, 0) => PhaseLabel::Boundary,
        (1, 1) => PhaseLabel::Case1,
        (1, -1) => PhaseLabel::Case2,
        (-1, -1) => PhaseLabel::Case3,
        _ => match s_5 {
            1 => PhaseLabel::Case4A,
            -1 => PhaseLabel::Case4B,
            _ => PhaseLabel::Boundary,
        },
    }
}

/// f1'(0) = b1 and f1'(1/2) = -(6 b1 + 2 b2)/16 pick cases 1-4; the sign of
/// 5 b1 + b2 splits case 4.
pub fn nlv_phase(b1: f64, b2: f64) -> PhaseLabel {
    nlv_label(fsign(b1), fsign(3.0 * b1 + b2), fsign(5.0 * b1 + b2))
}

pub fn nlv_phase_exact(b1: &Q, b2: &Q) -> PhaseLabel {
    nlv_label(qsign(b1), qsign(&(qi(3) * b1 + b2)), qsign(&(qi(5) * b1 + b2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, t: f64) -> bool {
        (a - b).abs() <= t
    }

    #[test]
    fn lv_symmetric_case() {
        let (p2, p3) = (0.3, 0.2);
        let f = lv_f(-1.0, -1.0, p2, p3);
        // p3 u(1-u)(1-2u) = p3 (u - 3u^2 + 2u^3)
        let want = [0.0, p3, -3.0 * p3, 2.0 * p3];
        for (c, w) in f.coeffs_f64(4).iter().zip(want) {
            assert!(close(*c, w, 1e-15));
        }
        assert_eq!(lv_ustar(-1.0, -1.0, p2, p3).unwrap(), Some(0.5));
        assert_eq!(lv_ustar(1.0, -1.0, p2, p3), Err(Error::DegenerateSum));
    }

    #[test]
    fn lv_ustar_increases_along_the_cone() {
        let (p2, p3) = (0.3, 0.2);
        let m0 = lv_m0(p2, p3);
        let mut last = 0.0;
        for i in 1..100 {
            let m = m0 + (1.0 / m0 - m0) * i as f64 / 100.0;
            let u = lv_ustar(1.0, m, p2, p3).unwrap().unwrap();
            assert!(u > last);
            last = u;
        }
        assert!(lv_ustar(1.0, m0, p2, p3).unwrap().is_none());
    }

    #[test]
    fn lv_takeover_regime_is_negative() {
        let (p2, p3) = (0.3, 0.2);
        let m0 = lv_m0(p2, p3);
        let eta = 0.1;
        let f = lv_f(-1.0, -m0 * (1.0 - eta), p2, p3);
        for i in 1..1000 {
            assert!(f.eval(i as f64 / 1000.0) < 0.0);
        }
    }

    #[test]
    fn lv_phase_examples() {
        assert_eq!(lv_phase(-1.0, -1.0, 0.4), PhaseLabel::R1);
        assert_eq!(lv_phase(1.0, 2.0, 0.4), PhaseLabel::R4);
        assert_eq!(lv_phase(2.0, 1.0, 0.4), PhaseLabel::R5);
        assert_eq!(lv_phase(1.0, 1.0, 0.4), PhaseLabel::Boundary);
        assert_eq!(lv_phase(1.0, 0.4, 0.4), PhaseLabel::Boundary);
        assert_eq!(lv_phase(1.0, 0.1, 0.4), PhaseLabel::R3);
        assert_eq!(lv_phase(0.1, 1.0, 0.4), PhaseLabel::R2);
        assert_eq!(lv_phase_exact(&qi(1), &qi(2), &qr(2, 5)), PhaseLabel::R4);
    }

    #[test]
    fn lv_phase_agrees_with_the_shape_of_f() {
        let (p2, p3) = (0.3, 0.2);
        let m0 = lv_m0(p2, p3);
        for i in 0..36 {
            let ang = i as f64 * core::f64::consts::PI / 18.0 + 0.01;
            let (t0, t1) = (libm::cos(ang), libm::sin(ang));
            let f = lv_f(t0, t1, p2, p3);
            let near0 = f.eval(1e-6).signum();
            let near1 = f.eval(1.0 - 1e-6).signum();
            let want = match (near0 > 0.0, near1 > 0.0) {
                (true, false) => PhaseLabel::R1,
                (false, false) => PhaseLabel::R2,
                (true, true) => PhaseLabel::R3,
                (false, true) => {
                    if f.integral01() < 0.0 {
                        PhaseLabel::R4
                    } else {
                        PhaseLabel::R5
                    }
                }
            };
            assert_eq!(lv_phase(t0, t1, m0), want, "angle {ang}");
        }
    }

    #[test]
    fn lv_integral_closed_form() {
        let (p2, p3) = (qr(3, 10), qr(1, 5));
        let f = lv_f_exact(&qi(2), &qr(1, 3), &p2, &p3);
        let want = (qi(2) * &p2 + &p3) * (qi(2) - qr(1, 3)) / qi(12);
        assert_eq!(f.definite_integral(&Q::zero(), &Q::one()), want);
    }

    #[test]
    fn coop_examples() {
        let gp = GameParams::cooperation(7.0, 1.0, 0.0);
        let f = coop_f(&gp, 6, 0.66, 0.3, 0.2);
        assert_eq!(f.degree(), Some(2));
        // k[(beta-delta) + (gamma-delta)/k] p01 = 6(-1 + 7/6) 0.66 = 0.66
        assert!(close(f.coeffs_f64(3)[1], 0.66, 1e-12));
        assert_eq!(coop_rule(7.0, 1.0, 6), PhaseLabel::Cooperators);
        assert_eq!(coop_rule(3.0, 1.0, 6), PhaseLabel::Defectors);
        assert_eq!(coop_rule(6.0, 1.0, 6), PhaseLabel::Boundary);
    }

    #[test]
    fn nlv_worked_example() {
        let (f1, b1, b2) = nlv_f1(&[1.0, 1.0, 3.0, 3.0]);
        assert_eq!((b1.clone(), b2.clone()), (qi(1), qi(-6)));
        assert_eq!(qi(3) * &b1 + &b2, qi(-3));
        assert_eq!(f1.definite_integral(&Q::zero(), &qr(1, 2)), qr(-1, 192));
        assert_eq!(f1.derivative().eval_exact(&qr(1, 2)), qr(6, 16));
        assert_eq!(nlv_phase(1.0, -6.0), PhaseLabel::Case2);
        assert_eq!(nlv_phase(-1.0, 10.0), PhaseLabel::Case4A);
        assert_eq!(nlv_phase(-1.0, 4.0), PhaseLabel::Case4B);
        assert_eq!(nlv_phase(0.0, 3.0), PhaseLabel::Boundary);
        assert_eq!(nlv_phase(1.0, 1.0), PhaseLabel::Case1);
        assert_eq!(nlv_phase(-1.0, 1.0), PhaseLabel::Case3);
        let roots = f1.roots_in_unit_interval(1e-12).unwrap();
        assert_eq!(roots.len(), 3);
        assert!(roots[0] > 0.0 && roots[0] < 0.5);
        assert!(close(roots[1], 0.5, 1e-12));
        assert!(close(roots[0] + roots[2], 1.0, 1e-11));
    }

    #[test]
    fn root_examples() {
        let f = lv_f(-1.0, -1.0, 0.5, 1.0);
        assert_eq!(f.roots_in_unit_interval(1e-12).unwrap(), vec![0.5]);
        assert_eq!(ReactionPolynomial::zero().roots_in_unit_interval(1e-9), Err(Error::IdenticallyZero));
        // (u - 1/3)^2
        let sq = ReactionPolynomial::new(vec![qr(1, 9), qr(-2, 3), qi(1)], Provenance::Inline);
        assert!(matches!(sq.roots_in_unit_interval(1e-9), Err(Error::NonSimpleRoot(r)) if close(r, 1.0 / 3.0, 1e-8)));
        // double roots at the endpoints are not interior
        let ends = ReactionPolynomial::new(bern(2, 2), Provenance::Inline);
        assert!(ends.roots_in_unit_interval(1e-9).unwrap().is_empty());
    }

    fn nlv_a() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(0u32..64).prop_map(|a| a.map(|x| x as f64 / 8.0))
    }

    proptest! {
        #[test]
        fn lv_exchange_symmetry(t0 in -3.0f64..3.0, t1 in -3.0f64..3.0, p2 in 0.05f64..0.5, p3 in 0.05f64..0.5, u in 0.0f64..1.0) {
            let a = lv_f(t0, t1, p2, p3).eval(u);
            let b = lv_f(t1, t0, p2, p3).eval(1.0 - u);
            prop_assert!((a + b).abs() < 1e-12);
        }

        #[test]
        fn nlv_f1_is_odd_about_half(a in nlv_a(), u in 0.0f64..1.0) {
            let (f1, b1, b2) = nlv_f1(&a);
            let uq = q(u);
            prop_assert_eq!(f1.eval_exact(&uq), -f1.eval_exact(&(Q::one() - &uq)));
            prop_assert_eq!(f1.derivative().eval_exact(&qr(1, 2)), -(qi(6) * &b1 + qi(2) * &b2) / qi(16));
            prop_assert_eq!(f1.definite_integral(&Q::zero(), &qr(1, 2)), (qi(5) * &b1 + &b2) / qi(192));
        }

        #[test]
        fn tilt_raises_f1(a in nlv_a(), lambda in 0.01f64..2.0) {
            prop_assume!(a.iter().sum::<f64>() > 0.0);
            let (f1, _, _) = nlv_f1(&a);
            let fl = nlv_flambda(&a, lambda);
            for i in 1..200 {
                let u = q(i as f64 / 200.0);
                prop_assert!(fl.eval_exact(&u) > f1.eval_exact(&u));
            }
        }

        #[test]
        fn coop_cubic_vanishes_on_equal_differences(b in 0u32..80, c in 1u32..24, k in 2usize..12) {
            // dyadic payoffs keep alpha - beta = gamma - delta exact
            let gp = GameParams::cooperation(b as f64 / 8.0, c as f64 / 8.0, 0.0);
            let f = coop_f(&gp, k, 0.6, 0.3, 0.2);
            prop_assert!(f.degree().is_none_or(|d| d <= 2));
        }

    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn roots_match_a_sign_scan(
            roots in prop::collection::vec(-400i64..1400, 1..5),
            lead in prop::sample::select(vec![-3i64, -1, 1, 2]),
            extra in prop::bool::ANY,
        ) {
            // distinct rational roots r/1000, optionally times a positive quadratic
            let mut rs: Vec<i64> = roots;
            rs.sort();
            rs.dedup();
            prop_assume!(rs.windows(2).all(|w| w[1] - w[0] >= 2));
            prop_assume!(rs.iter().all(|&r| r != 0 && r != 1000));
            let mut p = vec![qi(lead)];
            for &r in &rs {
                p = pmul(&p, &[-qr(r, 1000), qi(1)]);
            }
            if extra {
                p = pmul(&p, &[qi(1), qi(0), qi(1)]);
            }
            let f = ReactionPolynomial::new(p, Provenance::Inline);
            let found = f.roots_in_unit_interval(1e-12).unwrap();
            // oracle: sign changes on a 10^6-point grid
            let n = 1_000_000;
            let mut changes = Vec::new();
            let mut prev = f.eval(0.5 / n as f64).signum();
            for i in 1..n {
                let x = (i as f64 + 0.5) / n as f64;
                let s = f.eval(x).signum();
                if s != prev {
                    changes.push(x);
                }
                prev = s;
            }
            prop_assert_eq!(found.len(), changes.len());
            for (r, c) in found.iter().zip(&changes) {
                prop_assert!((r - c).abs() <= 1.0 / n as f64);
            }
        }
    }
}
