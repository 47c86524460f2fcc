//! Drift and diffusion coefficient families with known regularity constants.
//!
//! Measure dependence enters only through the mean of the current marginal,
//! which is 1-Lipschitz for `W_1` (hence for every `W_delta`, `delta >= 1`).
//! All diffusion matrices are diagonal, so the noise dimension equals the
//! state dimension.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{moment, EmpiricalMeasure};

/// `a x + b m(rho) + c`, applied componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearMeanField {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LinearMeanField {
    #[inline]
    fn apply(&self, x: f64, m: f64) -> f64 {
        let v = self.a * x + self.c;
        // b = 0 must not touch the mean at all: it keeps measure-free
        // dynamics bit-identical whatever law they are run against
        if self.b != 0.0 {
            v + self.b * m
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    LinearMeanField {
        a: f64,
        b: f64,
        c: f64,
    },
    /// The base drift multiplied by `1 + amplitude * sin(t)`.
    TimeModulated {
        base: LinearMeanField,
        amplitude: f64,
    },
    Zero,
}

impl DriftSpec {
    pub fn linear(a: f64, b: f64, c: f64) -> Self {
        DriftSpec::LinearMeanField { a, b, c }
    }

    fn parts(&self) -> Option<(LinearMeanField, f64)> {
        match *self {
            DriftSpec::LinearMeanField { a, b, c } => Some((LinearMeanField { a, b, c }, 0.0)),
            DriftSpec::TimeModulated { base, amplitude } => Some((base, amplitude)),
            DriftSpec::Zero => None,
        }
    }

    pub fn lipschitz_x(&self) -> f64 {
        self.parts().map_or(0.0, |(l, th)| l.a.abs() * (1.0 + th.abs()))
    }

    pub fn lipschitz_measure(&self) -> f64 {
        self.parts().map_or(0.0, |(l, th)| l.b.abs() * (1.0 + th.abs()))
    }

    pub fn depends_on_measure(&self) -> bool {
        self.parts().is_some_and(|(l, _)| l.b != 0.0)
    }

    /// Constant `C` with `|mu(t, x, rho)| <= C (1 + |x|)` given `|m(rho)|`.
    pub fn growth_constant(&self, mean_norm: f64, dim: usize) -> f64 {
        self.parts().map_or(0.0, |(l, th)| {
            (1.0 + th.abs()) * l.a.abs().max(l.c.abs() * (dim as f64).sqrt() + l.b.abs() * mean_norm)
        })
    }

    /// Writes `mu(t, x, .)` into `out` given the mean of the current law.
    #[inline]
    pub fn eval_with_mean(&self, t: f64, x: &[f64], mean: &[f64], out: &mut [f64]) {
        match self.parts() {
            None => out.fill(0.0),
            Some((l, th)) => {
                let factor = if th != 0.0 { 1.0 + th * t.sin() } else { 1.0 };
                for ((o, &xi), &mi) in out.iter_mut().zip(x).zip(mean) {
                    let v = l.apply(xi, mi);
                    *o = if th != 0.0 { factor * v } else { v };
                }
            }
        }
    }

    pub fn eval(&self, t: f64, x: &[f64], rho: &EmpiricalMeasure) -> Result<Vec<f64>> {
        if x.len() != rho.dim() {
            return Err(Error::DimensionMismatch {
                expected: rho.dim(),
                got: x.len(),
            });
        }
        let mean = rho.mean();
        let mut out = vec![0.0; x.len()];
        self.eval_with_mean(t, x, &mean, &mut out);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionSpec {
    /// `diag(s0 + s1 x_i)`.
    Affine { s0: f64, s1: f64 },
    /// `diag(s0 + s1 x_i + s2 m_i(rho))`.
    AffineMean { s0: f64, s1: f64, s2: f64 },
    /// `c |x|^eta`, `eta` in `[1/2, 1]`, applied componentwise.
    HolderPower { c: f64, eta: f64 },
    /// `s I`.
    ConstantVol { s: f64 },
}

impl DiffusionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DiffusionSpec::HolderPower { c, eta } => {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::InvalidParameter(format!("holder_power needs c > 0, got {c}")));
                }
                if !(0.5..=1.0).contains(&eta) {
                    return Err(Error::InvalidParameter(format!(
                        "holder_power exponent must lie in [1/2, 1], got {eta}"
                    )));
                }
                Ok(())
            }
            DiffusionSpec::Affine { s0, s1 } if !(s0.is_finite() && s1.is_finite()) => Err(Error::InvalidParameter(
                "affine diffusion parameters must be finite".into(),
            )),
            DiffusionSpec::AffineMean { s0, s1, s2 } if !(s0.is_finite() && s1.is_finite() && s2.is_finite()) => Err(
                Error::InvalidParameter("affine_mean diffusion parameters must be finite".into()),
            ),
            DiffusionSpec::ConstantVol { s } if !s.is_finite() => {
                Err(Error::InvalidParameter("constant volatility must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn depends_on_measure(&self) -> bool {
        matches!(self, DiffusionSpec::AffineMean { .. })
    }

    /// Hölder exponent in `x` (1 for Lipschitz families).
    pub fn holder_exponent(&self) -> f64 {
        match *self {
            DiffusionSpec::HolderPower { eta, .. } => eta,
            _ => 1.0,
        }
    }

    /// Global constant for `|s(x) - s(y)| <= C |x - y|^eta` per component.
    /// For `|x|^eta` this is `c`, by subadditivity of `u -> u^eta`.
    pub fn holder_constant(&self) -> f64 {
        match *self {
            DiffusionSpec::Affine { s1, .. } | DiffusionSpec::AffineMean { s1, .. } => s1.abs(),
            DiffusionSpec::HolderPower { c, .. } => c,
            DiffusionSpec::ConstantVol { .. } => 0.0,
        }
    }

    pub fn growth_constant(&self, mean_norm: f64, dim: usize) -> f64 {
        let rd = (dim as f64).sqrt();
        match *self {
            DiffusionSpec::Affine { s0, s1 } => (s0.abs() * rd).max(s1.abs()),
            DiffusionSpec::AffineMean { s0, s1, s2 } => (s0.abs() * rd + s2.abs() * mean_norm).max(s1.abs()),
            DiffusionSpec::HolderPower { c, .. } => c * rd,
            DiffusionSpec::ConstantVol { s } => s.abs() * rd,
        }
    }

    #[inline]
    fn component(&self, x: f64, m: f64) -> f64 {
        match *self {
            DiffusionSpec::Affine { s0, s1 } => s0 + s1 * x,
            DiffusionSpec::AffineMean { s0, s1, s2 } => s0 + s1 * x + s2 * m,
            DiffusionSpec::HolderPower { c, eta } => {
                if eta == 0.5 {
                    c * x.abs().sqrt()
                } else {
                    c * x.abs().powf(eta)
                }
            }
            DiffusionSpec::ConstantVol { s } => s,
        }
    }

    /// Diagonal of `sigma(t, x, .)` given the mean of the current law.
    #[inline]
    pub fn diag_with_mean(&self, x: &[f64], mean: &[f64], out: &mut [f64]) {
        for ((o, &xi), &mi) in out.iter_mut().zip(x).zip(mean) {
            *o = self.component(xi, mi);
        }
    }

    /// The `d x d` diffusion matrix. `rho` is required exactly for the
    /// measure-dependent family.
    pub fn eval(&self, _t: f64, x: &[f64], rho: Option<&EmpiricalMeasure>) -> Result<Array2<f64>> {
        let mean = match (self.depends_on_measure(), rho) {
            (true, None) => return Err(Error::MeasureRequired),
            (true, Some(r)) => {
                if r.dim() != x.len() {
                    return Err(Error::DimensionMismatch {
                        expected: r.dim(),
                        got: x.len(),
                    });
                }
                r.mean()
            }
            (false, _) => vec![0.0; x.len()],
        };
        let mut diag = vec![0.0; x.len()];
        self.diag_with_mean(x, &mean, &mut diag);
        Ok(Array2::from_diag(&ndarray::Array1::from(diag)))
    }

    /// Largest sampled ratio `|s(x) - s(y)| / |x - y|^eta` over pairs in
    /// `[-box, box]` (scalar case; the law argument is frozen at mean 0).
    ///
    /// A third of the pairs are uniform, a third are mirror pairs `(x, -x)`
    /// and a third are close pairs, where Hölder ratios peak near the origin.
    pub fn estimate_holder_constant(&self, n_pairs: usize, r#box: f64, seed: u64) -> Result<f64> {
        if n_pairs < 100 {
            return Err(Error::InvalidParameter(format!(
                "need at least 100 pairs, got {n_pairs}"
            )));
        }
        let eta = self.holder_exponent();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: f64 = 0.0;
        for i in 0..n_pairs {
            let x = rng.random_range(-r#box..=r#box);
            let y = match i % 3 {
                0 => rng.random_range(-r#box..=r#box),
                1 => -x,
                _ => x + r#box * 10f64.powf(rng.random_range(-8.0..-1.0)) * if rng.random() { 1.0 } else { -1.0 },
            };
            let gap = (x - y).abs();
            if gap == 0.0 {
                continue;
            }
            let ratio = (self.component(x, 0.0) - self.component(y, 0.0)).abs() / gap.powf(eta);
            best = best.max(ratio);
        }
        Ok(best)
    }
}

/// Summary statistics of a law that the coefficient families read.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureSummary {
    pub mean: Vec<f64>,
    /// `(q, m_q)` pairs.
    pub moments: Vec<(f64, f64)>,
    pub sample_count: usize,
}

impl MeasureSummary {
    pub fn from_measure(rho: &EmpiricalMeasure, qs: &[f64]) -> Result<Self> {
        Ok(Self {
            mean: rho.mean(),
            moments: qs
                .iter()
                .map(|&q| moment(rho, q).map(|m| (q, m)))
                .collect::<Result<_>>()?,
            sample_count: rho.len(),
        })
    }
}
