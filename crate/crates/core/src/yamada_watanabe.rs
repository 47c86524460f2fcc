//! Yamada–Watanabe approximations of `|x|`.
//!
//! Thresholds `1 = a_0 > a_1 > ...` satisfy
//! `\int_{a_n}^{a_{n-1}} x^{-(1+2 xi)} dx = n`. On each `(a_n, a_{n-1})` a
//! smooth density `psi_n` with `0 <= psi_n(x) <= 2 / (n x^(1+2 xi))` is
//! placed, and `phi_n(x) = \int_0^{|x|} \int_0^y psi_n(z) dz dy`.
//!
//! The density is built in the variable `v = \int_x^{a_{n-1}} y^{-(1+2 xi)} dy`,
//! which maps `(a_n, a_{n-1})` onto `(0, n)`: with
//! `psi_n(x) = x^{-(1+2 xi)} g(v(x))` the pointwise bound reads `g <= 2/n`
//! and the normalization reads `\int g = 1`, so a standard bump spread over
//! most of `(0, n)` always fits.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;
use crate::quadrature::{gauss_legendre3, integrate, integrate_tol};

/// Nodes per tabulated `phi_n`.
pub const TABLE_NODES: usize = 4096;
/// Bisection budget for the support margin.
pub const MAX_BISECTIONS: usize = 60;
/// The bump peak is kept below this fraction of the bound.
pub const BOUND_SAFETY: f64 = 0.95;
const MAX_MARGIN: f64 = 0.25;

fn check_xi(xi: f64) -> Result<()> {
    if (0.0..=0.5).contains(&xi) {
        Ok(())
    } else {
        Err(Error::XiOutOfRange(xi))
    }
}

/// `a_0 = 1, ..., a_{n_max}`.
pub fn compute_a_sequence(xi: f64, n_max: usize) -> Result<Vec<f64>> {
    check_xi(xi)?;
    let a: Vec<f64> = (0..=n_max)
        .map(|n| {
            let nf = n as f64;
            if xi == 0.0 {
                // a_n = a_{n-1} e^{-n}
                (-nf * (nf + 1.0) / 2.0).exp()
            } else {
                // a_n^{-2 xi} = a_{n-1}^{-2 xi} + 2 xi n
                (1.0 + xi * nf * (nf + 1.0)).powf(-1.0 / (2.0 * xi))
            }
        })
        .collect();
    if a.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "thresholds underflow before n = {n_max} for xi = {xi}"
        )));
    }
    Ok(a)
}

/// Standard bump `exp(-1/(1-u^2))` on `(-1, 1)`.
fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

fn bump_mass() -> f64 {
    2.0 * integrate(bump, 0.0, 1.0, 1e-14).expect("bump integral converges")
}

/// The density `psi_n` on `(a_n, a_prev)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mollifier {
    pub n: usize,
    pub xi: f64,
    pub a_n: f64,
    pub a_prev: f64,
    /// Support in the `v` variable, `0 < v_lo < v_hi < v(a_n)`.
    pub v_lo: f64,
    pub v_hi: f64,
    /// Fraction of `(0, v(a_n))` left empty at each end.
    pub margin: f64,
    /// Largest `g`, to be compared with `2/n`.
    pub peak: f64,
    mass: f64,
}

impl Mollifier {
    /// `\int_x^{a_prev} y^{-(1+2 xi)} dy`.
    pub fn v(&self, x: f64) -> f64 {
        v_of(x, self.a_prev, self.xi)
    }

    fn g(&self, v: f64) -> f64 {
        let half = 0.5 * (self.v_hi - self.v_lo);
        let mid = 0.5 * (self.v_hi + self.v_lo);
        bump((v - mid) / half) / (self.mass * half)
    }

    /// `psi_n(x)`; zero outside the support and at both thresholds.
    pub fn eval(&self, x: f64) -> f64 {
        if !(x > self.a_n && x < self.a_prev) {
            return 0.0;
        }
        x.powf(-(1.0 + 2.0 * self.xi)) * self.g(self.v(x))
    }

    /// `\int_0^x psi_n`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.a_n {
            return 0.0;
        }
        if x >= self.a_prev {
            return 1.0;
        }
        let v = self.v(x);
        if v >= self.v_hi {
            return 0.0;
        }
        if v <= self.v_lo {
            return 1.0;
        }
        // mass of g on (v, v_hi), integrating over the shorter side
        let mid = 0.5 * (self.v_hi + self.v_lo);
        let half = 0.5 * (self.v_hi - self.v_lo);
        let u = (v - mid) / half;
        let tail = integrate_tol(bump, u.abs(), 1.0, 1e-13, 1e-17).expect("bump tail converges") / self.mass;
        if u >= 0.0 {
            tail
        } else {
            1.0 - tail
        }
    }

    /// `sup_x psi_n(x) x^(1+2 xi)`, which the bound requires to be at most `2/n`.
    pub fn scaled_peak(&self) -> f64 {
        self.peak
    }
}

fn v_of(x: f64, a_prev: f64, xi: f64) -> f64 {
    if xi == 0.0 {
        (a_prev / x).ln()
    } else {
        (x.powf(-2.0 * xi) - a_prev.powf(-2.0 * xi)) / (2.0 * xi)
    }
}

/// Places a normalized bump on `(a_n, a_prev)` whose density stays below
/// `2 / (n x^(1+2 xi))`. The support margin is found by bisection: the
/// widest margin (at most a quarter of the range at each end) whose peak
/// is still within [`BOUND_SAFETY`] of the bound.
pub fn build_mollifier(a_n: f64, a_prev: f64, n: usize, xi: f64) -> Result<Mollifier> {
    check_xi(xi)?;
    if !(a_n > 0.0 && a_n < a_prev) || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "need 0 < a_n < a_prev and n >= 1, got ({a_n}, {a_prev}), n = {n}"
        )));
    }
    let width = v_of(a_n, a_prev, xi);
    let mass = bump_mass();
    let bound = 2.0 / n as f64;
    let peak_at = |margin: f64| bump(0.0) / (mass * 0.5 * (1.0 - 2.0 * margin) * width);
    if peak_at(0.0) > BOUND_SAFETY * bound {
        return Err(Error::InfeasibleBound { lo: a_n, hi: a_prev, n });
    }
    let (mut lo, mut hi) = (0.0, MAX_MARGIN);
    if peak_at(hi) <= BOUND_SAFETY * bound {
        lo = hi;
    } else {
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if peak_at(mid) <= BOUND_SAFETY * bound {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
    }
    let margin = lo.max(1e-6);
    Ok(Mollifier {
        n,
        xi,
        a_n,
        a_prev,
        v_lo: margin * width,
        v_hi: (1.0 - margin) * width,
        margin,
        peak: peak_at(margin),
        mass,
    })
}

#[derive(Debug, Clone)]
struct PhiTable {
    phi: MonotoneCubic,
    /// `phi_n(a_prev)`; beyond `a_prev`, `phi_n(x) = x - offset`.
    offset: f64,
}

/// Thresholds, densities and tabulated `phi_n` for `n = 1..=n_max`.
#[derive(Debug, Clone)]
pub struct YWSequence {
    xi: f64,
    a: Vec<f64>,
    mollifiers: Vec<Mollifier>,
    tables: Vec<PhiTable>,
}

impl YWSequence {
    pub fn new(xi: f64, n_max: usize) -> Result<Self> {
        let a = compute_a_sequence(xi, n_max)?;
        let mut mollifiers = Vec::with_capacity(n_max);
        let mut tables = Vec::with_capacity(n_max);
        for n in 1..=n_max {
            let m = build_mollifier(a[n], a[n - 1], n, xi)?;
            tables.push(tabulate(&m)?);
            mollifiers.push(m);
        }
        Ok(Self {
            xi,
            a,
            mollifiers,
            tables,
        })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn n_max(&self) -> usize {
        self.a.len() - 1
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn mollifier(&self, n: usize) -> &Mollifier {
        &self.mollifiers[n - 1]
    }

    pub fn psi(&self, n: usize, x: f64) -> f64 {
        self.mollifier(n).eval(x)
    }

    /// `phi_n(x)`.
    pub fn phi(&self, n: usize, x: f64) -> f64 {
        let m = self.mollifier(n);
        let t = &self.tables[n - 1];
        let y = x.abs();
        if y <= m.a_n {
            0.0
        } else if y >= m.a_prev {
            y - m.a_prev + t.offset
        } else {
            t.phi.eval(y)
        }
    }

    /// `phi_n'(x) = sign(x) \int_0^{|x|} psi_n`.
    pub fn phi_prime(&self, n: usize, x: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else {
            x.signum() * self.mollifier(n).cdf(x.abs())
        }
    }

    /// `phi_n''(x) = psi_n(|x|)`.
    pub fn phi_second(&self, n: usize, x: f64) -> f64 {
        self.psi(n, x.abs())
    }

    /// `|x| - phi_n(x)` for `|x| >= a_{n-1}`, a constant in `[a_n, a_{n-1}]`.
    pub fn offset(&self, n: usize) -> f64 {
        self.mollifier(n).a_prev - self.tables[n - 1].offset
    }

    /// Rows `x, phi, phi', phi''` for the CSV dump.
    pub fn table(&self, n: usize, xs: &[f64]) -> Vec<[f64; 4]> {
        xs.iter()
            .map(|&x| [x, self.phi(n, x), self.phi_prime(n, x), self.phi_second(n, x)])
            .collect()
    }
}

/// `phi_n(x, seq, n)`.
pub fn phi_n(x: f64, seq: &YWSequence, n: usize) -> f64 {
    seq.phi(n, x)
}

/// Tabulates `phi_n` on a log-spaced grid over `(a_n, a_prev)`, integrating
/// `\int_0^y psi_n` panel by panel with three-point Gauss–Legendre and
/// interpolating with the exact slopes.
fn tabulate(m: &Mollifier) -> Result<PhiTable> {
    let ratio = (m.a_prev / m.a_n).ln();
    let nodes: Vec<f64> = (0..TABLE_NODES)
        .map(|i| {
            if i == TABLE_NODES - 1 {
                m.a_prev
            } else {
                m.a_n * (ratio * i as f64 / (TABLE_NODES - 1) as f64).exp()
            }
        })
        .collect();
    let slopes: Vec<f64> = nodes.iter().map(|&y| m.cdf(y)).collect();
    let mut phi = vec![0.0; TABLE_NODES];
    for i in 1..TABLE_NODES {
        phi[i] = phi[i - 1] + gauss_legendre3(|y| m.cdf(y), nodes[i - 1], nodes[i]);
    }
    let offset = phi[TABLE_NODES - 1];
    Ok(PhiTable {
        phi: MonotoneCubic::hermite(nodes, phi, slopes)?,
        offset,
    })
}
