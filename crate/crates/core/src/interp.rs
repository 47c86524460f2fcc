//! Monotone piecewise-cubic Hermite interpolation (Fritsch–Carlson).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape-preserving cubic interpolant through `(x_i, y_i)`.
///
/// Between nodes the interpolant never overshoots the data: on every
/// interval it stays within the range of its two end values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

fn check_nodes(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidParameter("interpolation needs at least two nodes".into()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) || xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "interpolation nodes must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        check_nodes(&xs, &ys)?;
        let n = xs.len();
        let secants: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            let (l, r) = (secants[i - 1], secants[i]);
            slopes[i] = if l * r <= 0.0 {
                0.0
            } else {
                // weighted harmonic mean (Fritsch–Butland)
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                let w1 = 2.0 * h1 + h0;
                let w2 = h1 + 2.0 * h0;
                (w1 + w2) / (w1 / l + w2 / r)
            };
        }
        // endpoint slopes must not reverse the secant direction
        for (end, sec) in [(0, secants[0]), (n - 1, secants[n - 2])] {
            if slopes[end] * sec <= 0.0 {
                slopes[end] = 0.0;
            } else if slopes[end].abs() > 3.0 * sec.abs() {
                slopes[end] = 3.0 * sec;
            }
        }
        Ok(Self { xs, ys, slopes })
    }

    /// Cubic Hermite interpolant with prescribed node slopes. No shape
    /// constraint is applied to the slopes.
    pub fn hermite(xs: Vec<f64>, ys: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        check_nodes(&xs, &ys)?;
        if slopes.len() != xs.len() {
            return Err(Error::LengthMismatch(slopes.len(), xs.len()));
        }
        if slopes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("slopes must be finite".into()));
        }
        Ok(Self { xs, ys, slopes })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    fn locate(&self, x: f64) -> usize {
        let i = self.xs.partition_point(|&v| v <= x);
        i.clamp(1, self.xs.len() - 1) - 1
    }

    /// Value at `x`; clamps to the end values outside the node range.
    pub fn eval(&self, x: f64) -> f64 {
        let (lo, hi) = self.domain();
        if x <= lo {
            return self.ys[0];
        }
        if x >= hi {
            return self.ys[self.ys.len() - 1];
        }
        let i = self.locate(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1] + h11 * h * self.slopes[i + 1]
    }

    /// First derivative of the interpolant (zero outside the node range).
    pub fn derivative(&self, x: f64) -> f64 {
        let (lo, hi) = self.domain();
        if x < lo || x > hi {
            return 0.0;
        }
        let i = self.locate(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        let d00 = 6.0 * t2 - 6.0 * t;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = -6.0 * t2 + 6.0 * t;
        let d11 = 3.0 * t2 - 2.0 * t;
        (d00 * self.ys[i] + d01 * self.ys[i + 1]) / h + d10 * self.slopes[i] + d11 * self.slopes[i + 1]
    }
}
