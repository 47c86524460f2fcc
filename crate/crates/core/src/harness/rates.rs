//! Reference rates `eps_N` and log-log rate fits.

use serde::Serialize;

use crate::error::{Error, Result};

/// The Wasserstein order `delta = (4 + 2 eps) / eps`, so that
/// `2 / (2 + eps) + 2 / delta = 1`.
pub fn delta_from_epsilon(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    Ok((4.0 + 2.0 * epsilon) / epsilon)
}

/// Which side of `d = 2 delta` a configuration sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateRegime {
    /// `d < 2 delta`: `N^(-1/2)`.
    Parametric,
    /// `d = 2 delta`: `N^(-1/2) log2(1 + N)`.
    Critical,
    /// `d > 2 delta`: `N^(-delta/d)`.
    Dimensional,
}

impl RateRegime {
    pub fn select(d: usize, delta: f64) -> Self {
        let two_delta = 2.0 * delta;
        let d = d as f64;
        if d < two_delta {
            RateRegime::Parametric
        } else if d == two_delta {
            RateRegime::Critical
        } else {
            RateRegime::Dimensional
        }
    }

    /// Power of `N` in `eps_N`, ignoring the logarithm at the critical point.
    pub fn exponent(&self, d: usize, delta: f64) -> f64 {
        match self {
            RateRegime::Parametric | RateRegime::Critical => -0.5,
            RateRegime::Dimensional => -delta / d as f64,
        }
    }
}

/// Expected order of `E[W_delta(rhobar^N, rho)^delta]`.
pub fn epsilon_n(d: usize, delta: f64, n: usize) -> f64 {
    let nf = n as f64;
    match RateRegime::select(d, delta) {
        RateRegime::Parametric => nf.powf(-0.5),
        RateRegime::Critical => nf.powf(-0.5) * (1.0 + nf).log2(),
        RateRegime::Dimensional => nf.powf(-delta / d as f64),
    }
}

/// Least-squares line through `(log N, log error)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl RateFit {
    /// Fits `log y = intercept + slope log x`. Needs two distinct `x` and
    /// strictly positive `y`.
    pub fn fit(xs: &[f64], ys: &[f64]) -> Option<Self> {
        if xs.len() != ys.len() || xs.len() < 2 || ys.iter().chain(xs).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return None;
        }
        let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
        let n = lx.len() as f64;
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
        if sxx == 0.0 {
            return None;
        }
        let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
        let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
        let slope = sxy / sxx;
        let r_squared = if syy == 0.0 {
            1.0
        } else {
            (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
        };
        Some(Self {
            slope,
            intercept: my - slope * mx,
            r_squared,
        })
    }

    pub fn within(&self, target: f64, band: f64) -> bool {
        (self.slope - target).abs() <= band
    }
}

/// Acceptance band for every fitted slope.
pub const SLOPE_BAND: f64 = 0.15;
