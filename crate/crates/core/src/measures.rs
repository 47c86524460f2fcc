//! Empirical measures, law flows and Wasserstein distances between them.
//!
//! All distances compare uniform-weight point clouds. In one dimension the
//! monotone (quantile) coupling is optimal, so [`wasserstein_1d`] and
//! [`wasserstein_1d_quantile`] are exact; in higher dimensions
//! [`wasserstein_exact`] solves the assignment problem and
//! [`wasserstein_sliced`] is the scalable, clearly labelled surrogate.

use std::fmt;
use std::io::Write;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Largest cloud handled by the exact assignment solver.
pub const EXACT_LIMIT: usize = 512;

/// Uniform probability measure on `N` points of `R^d` (one point per row).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Array2<f64>,
}

impl EmpiricalMeasure {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "an empirical measure needs at least one point of dimension >= 1".into(),
            ));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "empirical measure has non-finite coordinates".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::new(Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).expect("shape"))
    }

    /// Dirac mass at `x`.
    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::new(Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    /// First coordinates as a vector (the whole cloud when `d = 1`).
    pub fn scalars(&self) -> Vec<f64> {
        self.points.column(0).to_vec()
    }

    /// Coordinate-wise mean, summed in sorted order so that the result does
    /// not depend on the order of the points.
    pub fn mean(&self) -> Vec<f64> {
        self.points
            .axis_iter(Axis(1))
            .map(|col| sorted_mean(col.iter().copied()))
            .collect()
    }

    /// `n` points drawn without replacement.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Self> {
        if n > self.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot draw {n} points without replacement from {}",
                self.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = sample(&mut rng, self.len(), n).into_vec();
        Self::new(self.points.select(Axis(0), &idx))
    }

    /// `n` points drawn with replacement.
    pub fn resample(&self, n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.len())).collect();
        Self::new(self.points.select(Axis(0), &idx))
    }

    /// Points with row indices in `range`.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::new(self.points.slice(ndarray::s![range, ..]).to_owned())
    }

    pub fn scaled(&self, a: f64) -> Result<Self> {
        Self::new(&self.points * a)
    }

    /// One point per row, columns `x0, x1, ...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((0..self.dim()).map(|j| format!("x{j}")))?;
        for row in self.points.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn sorted_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_unstable_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(1/N) sum |x_i|^q` with the Euclidean norm.
pub fn moment(mu: &EmpiricalMeasure, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::InvalidParameter(format!("moment order must be >= 1, got {q}")));
    }
    let total: f64 = mu.points.rows().into_iter().map(|r| r.dot(&r).sqrt().powf(q)).sum();
    Ok(total / mu.len() as f64)
}

fn check_order(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "Wasserstein order must be >= 1, got {p}"
        )))
    }
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// `W_p^p` between equal-size samples on the line via order statistics.
pub fn wasserstein_1d_pow(p: f64, xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_order(p)?;
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    let (a, b) = (sorted(xs), sorted(ys));
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs().powf(p)).sum::<f64>() / xs.len() as f64)
}

/// `W_p` between equal-size samples on the line.
pub fn wasserstein_1d(p: f64, xs: &[f64], ys: &[f64]) -> Result<f64> {
    Ok(wasserstein_1d_pow(p, xs, ys)?.powf(1.0 / p))
}

/// `W_p^p` between samples of possibly different sizes on the line:
/// `\int_0^1 |F^{-1}(u) - G^{-1}(u)|^p du` for the two step quantile functions.
pub fn wasserstein_1d_quantile_pow(p: f64, xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_order(p)?;
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    let (a, b) = (sorted(xs), sorted(ys));
    let (n, m) = (a.len(), b.len());
    // walk the merged breakpoints i/n and j/m in exact integer arithmetic:
    // position u = k / (n m)
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos = 0usize;
    let total = n * m;
    let mut acc = 0.0;
    while pos < total {
        let next_a = (i + 1) * m;
        let next_b = (j + 1) * n;
        let next = next_a.min(next_b);
        acc += (next - pos) as f64 * (a[i] - b[j]).abs().powf(p);
        pos = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    Ok(acc / total as f64)
}

pub fn wasserstein_1d_quantile(p: f64, xs: &[f64], ys: &[f64]) -> Result<f64> {
    Ok(wasserstein_1d_quantile_pow(p, xs, ys)?.powf(1.0 / p))
}

fn euclid(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_pair(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
    if mu.len() != nu.len() {
        return Err(Error::LengthMismatch(mu.len(), nu.len()));
    }
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    Ok(())
}

/// `W_p^p` by optimal assignment with cost `|x_i - y_j|^p`.
pub fn wasserstein_exact_pow(p: f64, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    check_order(p)?;
    check_pair(mu, nu)?;
    let n = mu.len();
    if n > EXACT_LIMIT {
        return Err(Error::TooLarge { n, limit: EXACT_LIMIT });
    }
    let mut cost = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            cost.push(euclid(mu.point(i), nu.point(j)).powf(p));
        }
    }
    let sol = assignment::solve(&cost, n);
    Ok(sol.iter().enumerate().map(|(r, &c)| cost[r * n + c]).sum::<f64>() / n as f64)
}

pub fn wasserstein_exact(p: f64, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    Ok(wasserstein_exact_pow(p, mu, nu)?.powf(1.0 / p))
}

/// Mean over random unit directions of the projected `W_p^p`.
pub fn wasserstein_sliced_pow(
    p: f64,
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    check_order(p)?;
    check_pair(mu, nu)?;
    if n_projections == 0 {
        return Err(Error::InvalidParameter("need at least one projection".into()));
    }
    let d = mu.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..n_projections {
        let dir: Vec<f64> = loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        };
        let dir = ArrayView1::from(&dir);
        let xs: Vec<f64> = mu.points.rows().into_iter().map(|r| r.dot(&dir)).collect();
        let ys: Vec<f64> = nu.points.rows().into_iter().map(|r| r.dot(&dir)).collect();
        acc += wasserstein_1d_pow(p, &xs, &ys)?;
    }
    Ok(acc / n_projections as f64)
}

pub fn wasserstein_sliced(
    p: f64,
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    Ok(wasserstein_sliced_pow(p, mu, nu, n_projections, seed)?.powf(1.0 / p))
}

/// Which estimator produced a distance; recorded next to every reported value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    /// Exact monotone coupling on the line (sizes may differ).
    Sorted1d,
    /// Exact assignment, `N <= 512`.
    Exact,
    /// Sliced surrogate with the given number of projections.
    Sliced { projections: usize },
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Sorted1d => write!(f, "sorted-1d"),
            Estimator::Exact => write!(f, "exact"),
            Estimator::Sliced { projections } => write!(f, "sliced({projections})"),
        }
    }
}

impl Estimator {
    /// Default choice for clouds of dimension `d` and size `n`.
    pub fn for_shape(d: usize, n: usize) -> Self {
        if d == 1 {
            Estimator::Sorted1d
        } else if n <= EXACT_LIMIT {
            Estimator::Exact
        } else {
            Estimator::Sliced { projections: 256 }
        }
    }

    /// `W_p^p(mu, nu)`. Only the sorted estimator accepts unequal sizes.
    pub fn distance_pow(&self, p: f64, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, seed: u64) -> Result<f64> {
        match *self {
            Estimator::Sorted1d => {
                if mu.dim() != 1 || nu.dim() != 1 {
                    return Err(Error::DimensionMismatch {
                        expected: 1,
                        got: mu.dim().max(nu.dim()),
                    });
                }
                wasserstein_1d_quantile_pow(p, &mu.scalars(), &nu.scalars())
            }
            Estimator::Exact => wasserstein_exact_pow(p, mu, nu),
            Estimator::Sliced { projections } => wasserstein_sliced_pow(p, mu, nu, projections, seed),
        }
    }
}

/// Time-indexed family of marginal laws, one cloud per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct LawFlow {
    grid: TimeGrid,
    measures: Vec<EmpiricalMeasure>,
}

impl LawFlow {
    pub fn new(grid: TimeGrid, measures: Vec<EmpiricalMeasure>) -> Result<Self> {
        if measures.len() != grid.n_nodes() {
            return Err(Error::LengthMismatch(measures.len(), grid.n_nodes()));
        }
        let (n, d) = (measures[0].len(), measures[0].dim());
        if let Some(m) = measures.iter().find(|m| m.len() != n || m.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: m.len(),
            });
        }
        Ok(Self { grid, measures })
    }

    /// The same measure at every node.
    pub fn constant(grid: TimeGrid, measure: EmpiricalMeasure) -> Self {
        Self {
            measures: vec![measure; grid.n_nodes()],
            grid,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn measures(&self) -> &[EmpiricalMeasure] {
        &self.measures
    }

    pub fn at(&self, k: usize) -> &EmpiricalMeasure {
        &self.measures[k]
    }

    pub fn cloud_size(&self) -> usize {
        self.measures[0].len()
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim()
    }

    /// `sup_k W_p(self_k, other_k)` over grid nodes.
    pub fn sup_distance(&self, other: &LawFlow, p: f64, estimator: Estimator, seed: u64) -> Result<f64> {
        if self.measures.len() != other.measures.len() {
            return Err(Error::LengthMismatch(self.measures.len(), other.measures.len()));
        }
        let mut sup: f64 = 0.0;
        for (k, (a, b)) in self.measures.iter().zip(&other.measures).enumerate() {
            let d = estimator
                .distance_pow(p, a, b, seed.wrapping_add(k as u64))?
                .powf(1.0 / p);
            sup = sup.max(d);
        }
        Ok(sup)
    }
}
