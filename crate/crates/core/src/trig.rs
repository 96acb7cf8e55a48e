//! Polynomial sine/cosine approximations on the yaw domain.
//!
//! Coefficients come either from the published table or from a weighted
//! Remez exchange. The table values are the relative-error minimax fits
//! (`|p/f - 1|` minimized), which is why [`ErrorMetric::Relative`] exists.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrigFn {
    Sin,
    Cos,
}

impl TrigFn {
    fn eval(self, x: f64) -> f64 {
        match self {
            TrigFn::Sin => x.sin(),
            TrigFn::Cos => x.cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Odd,
    Even,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMetric {
    Absolute,
    Relative,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RemezError {
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("no convergence after {iterations} exchanges (levelled error {levelled:.3e}, max error {max_error:.3e})")]
    NoConvergence { iterations: usize, levelled: f64, max_error: f64 },
    #[error("singular reference system")]
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxFit {
    /// Powers of the basis monomials, ascending.
    pub powers: Vec<u32>,
    /// Coefficient of each power.
    pub coeffs: Vec<f64>,
    /// Maximum weighted error over the interval.
    pub max_error: f64,
    /// Final reference (alternation) points on the non-negative half.
    pub reference: Vec<f64>,
    pub iterations: usize,
}

impl MinimaxFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.powers.iter().zip(&self.coeffs).map(|(&k, &c)| c * x.powi(k as i32)).sum()
    }
}

const MAX_EXCHANGES: usize = 60;
const GRID: usize = 20_000;

/// Minimax fit of `target` by a polynomial of the given parity and degree on
/// the symmetric interval `[-b, b]`.
pub fn remez_minimax(
    target: TrigFn,
    degree: u32,
    parity: Parity,
    interval: (f64, f64),
    metric: ErrorMetric,
) -> Result<MinimaxFit, RemezError> {
    let (a, b) = interval;
    if !(b > 0.0) || (a + b).abs() > 1e-12 * b.max(1.0) {
        return Err(RemezError::Invalid(format!("interval [{a}, {b}] is not symmetric about 0")));
    }
    let powers: Vec<u32> = match parity {
        Parity::Odd => (1..=degree).step_by(2).collect(),
        Parity::Even => (0..=degree).step_by(2).collect(),
    };
    if powers.is_empty() {
        return Err(RemezError::Invalid(format!("degree {degree} has no {parity:?} terms")));
    }
    let expected = match target {
        TrigFn::Sin => Parity::Odd,
        TrigFn::Cos => Parity::Even,
    };
    if parity != expected {
        return Err(RemezError::Invalid(format!("{target:?} needs {expected:?} parity")));
    }
    let problem = Reduced { target, parity, metric };
    // Relative error is unbounded where the target vanishes; stop just short.
    let hi = if metric == ErrorMetric::Relative && target.eval(b).abs() < 1e-9 { b * (1.0 - 1e-9) } else { b };
    let lo = if parity == Parity::Odd && metric == ErrorMetric::Absolute { hi * 1e-3 } else { 0.0 };
    let n = powers.len();

    let mut reference: Vec<f64> = (0..=n)
        .map(|i| {
            let t = (std::f64::consts::PI * i as f64 / n as f64).cos();
            lo + (hi - lo) * (1.0 - t) / 2.0
        })
        .collect();

    let mut last = (0.0, f64::INFINITY);
    for it in 1..=MAX_EXCHANGES {
        let (coeffs, levelled) = problem.solve_reference(&powers, &reference)?;
        let extrema = problem.extrema(&powers, &coeffs, lo, hi);
        let max_error = extrema.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
        last = (levelled.abs(), max_error);
        if max_error - levelled.abs() <= 1e-12 * max_error.max(1e-300) + 1e-15 {
            return Ok(MinimaxFit { powers, coeffs, max_error, reference, iterations: it });
        }
        match select_alternating(&extrema, n + 1) {
            Some(r) => reference = r,
            None => break,
        }
    }
    Err(RemezError::NoConvergence { iterations: MAX_EXCHANGES, levelled: last.0, max_error: last.1 })
}

/// The problem on `[0, b]` after dividing out `x` for odd parity, so that the
/// relative error stays finite at the origin.
struct Reduced {
    target: TrigFn,
    parity: Parity,
    metric: ErrorMetric,
}

impl Reduced {
    fn f(&self, x: f64) -> f64 {
        match self.parity {
            Parity::Even => self.target.eval(x),
            Parity::Odd => {
                if x.abs() < 1e-8 {
                    1.0 - x * x / 6.0
                } else {
                    self.target.eval(x) / x
                }
            }
        }
    }

    fn basis(&self, power: u32, x: f64) -> f64 {
        match self.parity {
            Parity::Even => x.powi(power as i32),
            Parity::Odd => x.powi(power as i32 - 1),
        }
    }

    /// Inverse weight: `err = (p - f) / scale`.
    fn scale(&self, x: f64) -> f64 {
        match (self.metric, self.parity) {
            (ErrorMetric::Relative, _) => self.f(x).abs(),
            (ErrorMetric::Absolute, Parity::Even) => 1.0,
            (ErrorMetric::Absolute, Parity::Odd) => 1.0 / x,
        }
    }

    fn error(&self, powers: &[u32], coeffs: &[f64], x: f64) -> f64 {
        let p: f64 = powers.iter().zip(coeffs).map(|(&k, &c)| c * self.basis(k, x)).sum();
        (p - self.f(x)) / self.scale(x)
    }

    fn solve_reference(&self, powers: &[u32], pts: &[f64]) -> Result<(Vec<f64>, f64), RemezError> {
        let n = powers.len();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        let mut rhs = DVector::zeros(n + 1);
        for (i, &x) in pts.iter().enumerate() {
            for (j, &k) in powers.iter().enumerate() {
                m[(i, j)] = self.basis(k, x);
            }
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            m[(i, n)] = sign * self.scale(x);
            rhs[i] = self.f(x);
        }
        let sol = m.lu().solve(&rhs).ok_or(RemezError::Singular)?;
        Ok((sol.rows(0, n).iter().copied().collect(), sol[n]))
    }

    /// Local extrema of the error on `[lo, hi]` (endpoints included), refined
    /// by golden-section search.
    fn extrema(&self, powers: &[u32], coeffs: &[f64], lo: f64, hi: f64) -> Vec<(f64, f64)> {
        let xs: Vec<f64> = (0..=GRID)
            .map(|i| {
                // Cluster toward the right end, where relative errors are steep.
                let t = i as f64 / GRID as f64;
                lo + (hi - lo) * (1.0 - (1.0 - t).powi(2))
            })
            .collect();
        let es: Vec<f64> = xs.iter().map(|&x| self.error(powers, coeffs, x)).collect();
        let mut out = Vec::new();
        for i in 0..xs.len() {
            let left = if i == 0 { None } else { Some(es[i - 1]) };
            let right = es.get(i + 1).copied();
            let is_peak = |v: f64| {
                left.map_or(true, |l| v.abs() >= l.abs() || l.signum() != v.signum())
                    && right.map_or(true, |r| v.abs() >= r.abs() || r.signum() != v.signum())
            };
            if !is_peak(es[i]) || es[i] == 0.0 {
                continue;
            }
            if i == 0 || i + 1 == xs.len() {
                out.push((xs[i], es[i]));
                continue;
            }
            let sign = es[i].signum();
            let g = |x: f64| -sign * self.error(powers, coeffs, x);
            let x = golden_min(g, xs[i - 1], xs[i + 1], 1e-14);
            out.push((x, self.error(powers, coeffs, x)));
        }
        out
    }
}

/// Pick `count` consecutive sign-alternating extrema containing the largest.
fn select_alternating(extrema: &[(f64, f64)], count: usize) -> Option<Vec<f64>> {
    let mut alt: Vec<(f64, f64)> = Vec::new();
    for &e in extrema {
        match alt.last_mut() {
            Some(last) if last.1.signum() == e.1.signum() => {
                if e.1.abs() > last.1.abs() {
                    *last = e;
                }
            }
            _ => alt.push(e),
        }
    }
    if alt.len() < count {
        return None;
    }
    while alt.len() > count {
        let gmax = alt.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
        let first = alt[0].1.abs();
        let last = alt[alt.len() - 1].1.abs();
        if (first < last && first < gmax) || last == gmax {
            alt.remove(0);
        } else {
            alt.pop();
        }
    }
    Some(alt.into_iter().map(|e| e.0).collect())
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Anything that provides sine/cosine surrogates on `[-domain, domain]`.
pub trait TrigPair {
    fn sin_approx(&self, psi: f64) -> f64;
    fn cos_approx(&self, psi: f64) -> f64;
    fn domain(&self) -> f64 {
        FRAC_PI_2
    }
}

/// The exact functions, used as a reference point.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactTrig;

impl TrigPair for ExactTrig {
    fn sin_approx(&self, psi: f64) -> f64 {
        psi.sin()
    }
    fn cos_approx(&self, psi: f64) -> f64 {
        psi.cos()
    }
}

/// `f_s(psi) = sum ks[i] psi^(2i+1)`, `f_c(psi) = sum kc[i] psi^(2i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigApprox {
    pub ks: Vec<f64>,
    pub kc: Vec<f64>,
    /// Half-width of the validity domain (rad).
    pub domain: f64,
}

impl TrigApprox {
    /// Published coefficients: `f_c = 0.8798 - 0.3566 psi^2`,
    /// `f_s = 0.9928 psi - 0.1462 psi^3`.
    pub fn table() -> Self {
        TrigApprox { ks: vec![0.9928, -0.1462], kc: vec![0.8798, -0.3566], domain: FRAC_PI_2 }
    }

    /// Relative-error minimax fits of the given odd (sine) and even (cosine)
    /// degrees on `[-pi/2, pi/2]`.
    pub fn remez(sin_degree: u32, cos_degree: u32) -> Result<Self, RemezError> {
        Self::remez_with(sin_degree, cos_degree, ErrorMetric::Relative)
    }

    pub fn remez_with(sin_degree: u32, cos_degree: u32, metric: ErrorMetric) -> Result<Self, RemezError> {
        let iv = (-FRAC_PI_2, FRAC_PI_2);
        let s = remez_minimax(TrigFn::Sin, sin_degree, Parity::Odd, iv, metric)?;
        let c = remez_minimax(TrigFn::Cos, cos_degree, Parity::Even, iv, metric)?;
        Ok(TrigApprox { ks: s.coeffs, kc: c.coeffs, domain: FRAC_PI_2 })
    }

    pub fn fs(&self, psi: f64) -> f64 {
        let p2 = psi * psi;
        self.ks.iter().rev().fold(0.0, |acc, &k| acc * p2 + k) * psi
    }

    pub fn fc(&self, psi: f64) -> f64 {
        let p2 = psi * psi;
        self.kc.iter().rev().fold(0.0, |acc, &k| acc * p2 + k)
    }

    /// `(power, coefficient)` pairs of `f_s`.
    pub fn sin_terms(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.ks.iter().enumerate().map(|(i, &k)| (2 * i as u32 + 1, k))
    }

    /// `(power, coefficient)` pairs of `f_c`.
    pub fn cos_terms(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.kc.iter().enumerate().map(|(i, &k)| (2 * i as u32, k))
    }

    /// Highest power appearing in either polynomial.
    pub fn degree(&self) -> u32 {
        let s = if self.ks.is_empty() { 0 } else { 2 * self.ks.len() as u32 - 1 };
        let c = if self.kc.is_empty() { 0 } else { 2 * (self.kc.len() as u32 - 1) };
        s.max(c)
    }
}

impl TrigPair for TrigApprox {
    fn sin_approx(&self, psi: f64) -> f64 {
        self.fs(psi)
    }
    fn cos_approx(&self, psi: f64) -> f64 {
        self.fc(psi)
    }
    fn domain(&self) -> f64 {
        self.domain
    }
}

/// Maximize a smooth function on `[lo, hi]`: dense grid, then golden-section
/// refinement around the best grid point.
pub fn grid_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> (f64, f64) {
    let h = (hi - lo) / (points - 1) as f64;
    let (mut bi, mut bv) = (0, f64::NEG_INFINITY);
    for i in 0..points {
        let v = f(lo + h * i as f64);
        if v > bv {
            bi = i;
            bv = v;
        }
    }
    let a = (lo + h * (bi as f64 - 1.0)).max(lo);
    let b = (lo + h * (bi as f64 + 1.0)).min(hi);
    let x = golden_min(|x| -f(x), a, b, 1e-12);
    let v = f(x);
    if v > bv {
        (x, v)
    } else {
        (lo + h * bi as f64, bv)
    }
}

/// `max |f_s^2 + f_c^2 - 1|` over the domain.
pub fn compute_delta_max(approx: &impl TrigPair) -> f64 {
    let d = approx.domain();
    let f = |x: f64| {
        let (s, c) = (approx.sin_approx(x), approx.cos_approx(x));
        (s * s + c * c - 1.0).abs()
    };
    grid_max(f, -d, d, 1_000_001).1
}

/// Largest yaw error `|atan2(f_s, f_c) - psi|` over the domain.
pub fn max_angle_error(approx: &impl TrigPair) -> f64 {
    let d = approx.domain();
    let f = |x: f64| (approx.sin_approx(x).atan2(approx.cos_approx(x)) - x).abs();
    grid_max(f, -d, d, 100_001).1
}
