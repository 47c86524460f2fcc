//! Volterra kernels `K(s, t)` on the simplex `0 <= s <= t <= T`.
//!
//! Every family shipped here is of convolution type, `K(s, t) = k(t - s)`,
//! which the weight routines exploit: the weight attached to the history
//! value at `t_j` when advancing to `t_k` depends only on the lag `k - j`.
//!
//! The admissibility checks are sampled numerical verifications of the
//! kernel inequalities (Hölder-type integrability for singular kernels,
//! derivative bounds for smooth ones). They can refute an assumption on the
//! sampled pairs but never prove it.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::interp::MonotoneCubic;
use crate::quadrature::{gauss_legendre3, integrate, integrate_singular_left, DEFAULT_REL_TOL};

/// Kernel families as they appear in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelFamily {
    /// `(t - s)^(-alpha)`.
    Fractional { alpha: f64 },
    /// `c * exp(-lambda * (t - s))`.
    ExpConvolution { c: f64, lambda: f64 },
    /// `c`.
    Constant { c: f64 },
    /// `k(t - s)` with `k` and `k'` tabulated on equally spaced nodes over `[0, T]`.
    SmoothConvolution { values: Vec<f64>, derivatives: Vec<f64> },
}

#[derive(Debug)]
struct Tabulated {
    value: MonotoneCubic,
    derivative: MonotoneCubic,
}

/// How the stochastic-integral weights are formed on each grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionWeightMode {
    /// `K(t_j, t_k)`.
    LeftPoint,
    /// Root-mean-square of `K(., t_k)` over the cell, so that the discrete
    /// stochastic convolution has the exact variance.
    VarianceMatched,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelSpec {
    family: KernelFamily,
    horizon: f64,
    #[serde(skip)]
    table: Option<Arc<Tabulated>>,
}

impl PartialEq for KernelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family && self.horizon == other.horizon
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")))
    }
}

impl KernelSpec {
    /// Builds a kernel on `[0, horizon]`.
    ///
    /// Fractional kernels are accepted for `alpha` in `(0, 1)`, which keeps
    /// them integrable as drift kernels; using one as a diffusion kernel
    /// additionally needs `alpha < 1/2` (see [`KernelSpec::check_square_integrable`]).
    pub fn new(family: KernelFamily, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel horizon must be positive, got {horizon}"
            )));
        }
        let mut table = None;
        match &family {
            KernelFamily::Fractional { alpha } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "fractional alpha must lie in (0, 1), got {alpha}"
                    )));
                }
            }
            KernelFamily::ExpConvolution { c, lambda } => {
                check_finite("c", *c)?;
                check_finite("lambda", *lambda)?;
                if *lambda < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "decay lambda must be non-negative, got {lambda}"
                    )));
                }
            }
            KernelFamily::Constant { c } => check_finite("c", *c)?,
            KernelFamily::SmoothConvolution { values, derivatives } => {
                if values.len() != derivatives.len() {
                    return Err(Error::LengthMismatch(values.len(), derivatives.len()));
                }
                let n = values.len();
                if n < 2 {
                    return Err(Error::InvalidParameter(
                        "tabulated kernel needs at least two nodes".into(),
                    ));
                }
                let nodes: Vec<f64> = (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect();
                table = Some(Arc::new(Tabulated {
                    value: MonotoneCubic::hermite(nodes.clone(), values.clone(), derivatives.clone())?,
                    derivative: MonotoneCubic::new(nodes, derivatives.clone())?,
                }));
            }
        }
        Ok(Self { family, horizon, table })
    }

    pub fn fractional(alpha: f64, horizon: f64) -> Result<Self> {
        Self::new(KernelFamily::Fractional { alpha }, horizon)
    }

    pub fn exp_convolution(c: f64, lambda: f64, horizon: f64) -> Result<Self> {
        Self::new(KernelFamily::ExpConvolution { c, lambda }, horizon)
    }

    pub fn constant(c: f64, horizon: f64) -> Result<Self> {
        Self::new(KernelFamily::Constant { c }, horizon)
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_singular(&self) -> bool {
        matches!(self.family, KernelFamily::Fractional { .. })
    }

    /// Fails unless `K(., t)` is square integrable, which any diffusion
    /// kernel must be.
    pub fn check_square_integrable(&self) -> Result<()> {
        match self.family {
            KernelFamily::Fractional { alpha } if 2.0 * alpha >= 1.0 => Err(Error::VarianceMatchedUndefined(alpha)),
            _ => Ok(()),
        }
    }

    /// Decay rate of the exponential family, if the kernel is one.
    pub fn exponential_decay(&self) -> Option<f64> {
        match self.family {
            KernelFamily::ExpConvolution { lambda, .. } => Some(lambda),
            KernelFamily::Constant { .. } => Some(0.0),
            _ => None,
        }
    }

    /// Largest Hölder exponent `gamma` for which the integrability
    /// inequalities can hold with the given `epsilon`, or `None` if no
    /// positive exponent works.
    ///
    /// For `(t - s)^(-alpha)` the second inequality scales like
    /// `h^(1 - alpha (2 + eps))` against `h^(gamma (2 + eps))`; bounded kernels
    /// behave like `alpha = 0`.
    pub fn claimed_gamma(&self, epsilon: f64) -> Option<f64> {
        let alpha = match self.family {
            KernelFamily::Fractional { alpha } => alpha,
            _ => 0.0,
        };
        let g = (1.0 / (2.0 + epsilon) - alpha).min(0.5);
        (g > 0.0).then_some(g)
    }

    /// Convolution profile `k(u)`, `u = t - s >= 0`.
    pub fn profile(&self, u: f64) -> f64 {
        match &self.family {
            KernelFamily::Fractional { alpha } => u.powf(-alpha),
            KernelFamily::ExpConvolution { c, lambda } => c * (-lambda * u).exp(),
            KernelFamily::Constant { c } => *c,
            KernelFamily::SmoothConvolution { .. } => self.table().value.eval(u),
        }
    }

    /// Derivative `k'(u)`.
    pub fn profile_derivative(&self, u: f64) -> f64 {
        match &self.family {
            KernelFamily::Fractional { alpha } => -alpha * u.powf(-alpha - 1.0),
            KernelFamily::ExpConvolution { c, lambda } => -lambda * c * (-lambda * u).exp(),
            KernelFamily::Constant { .. } => 0.0,
            KernelFamily::SmoothConvolution { .. } => self.table().derivative.eval(u),
        }
    }

    fn table(&self) -> &Tabulated {
        self.table.as_deref().expect("tabulated kernel carries its table")
    }

    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        if !(0.0 <= s && s <= t && t <= self.horizon) {
            return Err(Error::OutOfDomain {
                s,
                t,
                horizon: self.horizon,
            });
        }
        if s == t && self.is_singular() {
            return Err(Error::SingularAtDiagonal(s));
        }
        Ok(self.profile(t - s))
    }

    fn check_grid(&self, grid: &TimeGrid, k: usize) -> Result<()> {
        if grid.horizon() > self.horizon * (1.0 + 1e-12) {
            return Err(Error::OutOfDomain {
                s: 0.0,
                t: grid.horizon(),
                horizon: self.horizon,
            });
        }
        if k == 0 || k > grid.n_steps() {
            return Err(Error::InvalidParameter(format!(
                "step index {k} outside 1..={}",
                grid.n_steps()
            )));
        }
        Ok(())
    }

    /// `\int_{(l-1) dt}^{l dt} k(u) du`, the drift weight at lag `l >= 1`.
    pub fn drift_lag_weight(&self, lag: usize, dt: f64) -> f64 {
        let hi = lag as f64 * dt;
        let lo = (lag - 1) as f64 * dt;
        match &self.family {
            KernelFamily::Fractional { alpha } => {
                let e = 1.0 - alpha;
                (hi.powf(e) - lo.powf(e)) / e
            }
            KernelFamily::Constant { c } => c * dt,
            _ => gauss_legendre3(|u| self.profile(u), lo, hi),
        }
    }

    /// Diffusion weight at lag `l >= 1`.
    pub fn diffusion_lag_weight(&self, lag: usize, dt: f64, mode: DiffusionWeightMode) -> Result<f64> {
        let hi = lag as f64 * dt;
        let lo = (lag - 1) as f64 * dt;
        Ok(match mode {
            DiffusionWeightMode::LeftPoint => self.profile(hi),
            DiffusionWeightMode::VarianceMatched => match &self.family {
                KernelFamily::Fractional { alpha } => {
                    if 2.0 * alpha >= 1.0 {
                        return Err(Error::VarianceMatchedUndefined(*alpha));
                    }
                    let e = 1.0 - 2.0 * alpha;
                    ((hi.powf(e) - lo.powf(e)) / (e * dt)).sqrt()
                }
                KernelFamily::Constant { c } => *c,
                _ => {
                    let second = gauss_legendre3(|u| self.profile(u).powi(2), lo, hi) / dt;
                    let sign = self.profile(0.5 * (lo + hi)).signum();
                    sign * second.sqrt()
                }
            },
        })
    }

    /// Drift weights `w_{j,k}` for `j = 0..k`, approximating
    /// `\int_{t_j}^{t_{j+1}} K(s, t_k) ds`.
    pub fn drift_weights(&self, grid: &TimeGrid, k: usize) -> Result<Vec<f64>> {
        self.check_grid(grid, k)?;
        let dt = grid.dt();
        Ok((0..k).map(|j| self.drift_lag_weight(k - j, dt)).collect())
    }

    /// Diffusion weights `w_{j,k}` for `j = 0..k`.
    pub fn diffusion_weights(&self, grid: &TimeGrid, k: usize, mode: DiffusionWeightMode) -> Result<Vec<f64>> {
        self.check_grid(grid, k)?;
        let dt = grid.dt();
        (0..k).map(|j| self.diffusion_lag_weight(k - j, dt, mode)).collect()
    }

    /// The weight mode used when none is configured: variance matching for
    /// singular kernels, left-point evaluation for bounded ones.
    pub fn default_diffusion_mode(&self) -> DiffusionWeightMode {
        if self.is_singular() {
            DiffusionWeightMode::VarianceMatched
        } else {
            DiffusionWeightMode::LeftPoint
        }
    }

    /// `\int_0^t |K(s,t') - K(s,t)|^q ds + \int_t^{t'} |K(s,t')|^q ds`.
    fn increment_integral(&self, t: f64, t_prime: f64, q: f64) -> Result<f64> {
        let h = t_prime - t;
        match &self.family {
            KernelFamily::Constant { c } => Ok(c.abs().powf(q) * h),
            KernelFamily::ExpConvolution { c, lambda } => {
                let cq = c.abs().powf(q);
                let lq = lambda * q;
                let tail = if *lambda == 0.0 { h } else { -(-lq * h).exp_m1() / lq };
                let head = if *lambda == 0.0 {
                    0.0
                } else {
                    (-(-lambda * h).exp_m1()).powf(q) * (-(-lq * t).exp_m1()) / lq
                };
                Ok(cq * (head + tail))
            }
            KernelFamily::Fractional { alpha } => {
                let aq = alpha * q;
                if aq >= 1.0 {
                    return Ok(f64::INFINITY);
                }
                let tail = h.powf(1.0 - aq) / (1.0 - aq);
                // u = t - s = h v:  h^(1 - aq) \int_0^{t/h} (v^-a - (v+1)^-a)^q dv
                let f = |v: f64| (v.powf(-alpha) - (v + 1.0).powf(-alpha)).powf(q);
                let upper = t / h;
                let mut head = 0.0;
                if upper > 0.0 {
                    head += integrate_singular_left(f, 0.0, upper.min(1.0), aq, DEFAULT_REL_TOL)?;
                    let mut lo = 1.0;
                    while lo < upper {
                        let hi = (lo * 8.0).min(upper);
                        head += integrate(f, lo, hi, DEFAULT_REL_TOL)?;
                        lo = hi;
                    }
                }
                Ok(h.powf(1.0 - aq) * head + tail)
            }
            KernelFamily::SmoothConvolution { .. } => {
                let head = if t > 0.0 {
                    integrate(
                        |s| (self.profile(t_prime - s) - self.profile(t - s)).abs().powf(q),
                        0.0,
                        t,
                        DEFAULT_REL_TOL,
                    )?
                } else {
                    0.0
                };
                let tail = integrate(|s| self.profile(t_prime - s).abs().powf(q), t, t_prime, DEFAULT_REL_TOL)?;
                Ok(head + tail)
            }
        }
    }

    /// Worst ratio of the two integrability inequalities at the pair `(t, t')`.
    fn singular_ratio(&self, t: f64, t_prime: f64, gamma: f64, epsilon: f64) -> Result<f64> {
        let h = t_prime - t;
        let mut worst: f64 = 0.0;
        for q in [1.0 + epsilon, 2.0 + epsilon] {
            let lhs = self.increment_integral(t, t_prime, q)?;
            worst = worst.max(lhs / h.powf(gamma * q));
        }
        Ok(worst)
    }

    /// Sampled check of the integrability inequalities
    /// `\int_0^t |K(s,t')-K(s,t)|^q + \int_t^{t'} |K(s,t')|^q <= L |t'-t|^(gamma q)`
    /// for `q = 1 + eps` and `q = 2 + eps`.
    ///
    /// Half of the pairs have log-uniform gaps in `[1e-6, 1e-1]`, where
    /// singular kernels are binding; the rest have uniform gaps. Since any
    /// finite sample yields a finite constant, the check additionally fits the
    /// log-log slope of the worst ratio as the gap shrinks (at `t = T/2`); a
    /// clearly negative slope means the ratio diverges and the inequality
    /// cannot hold with any `L`.
    pub fn verify_assumption_singular(
        &self,
        gamma: f64,
        epsilon: f64,
        n_pairs: usize,
        seed: u64,
    ) -> Result<KernelAssumptionReport> {
        if !(gamma > 0.0 && gamma <= 0.5) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (0, 1/2], got {gamma}"
            )));
        }
        if !(epsilon > 0.0) {
            return Err(Error::NonPositiveEpsilon(epsilon));
        }
        if n_pairs == 0 {
            return Err(Error::InvalidParameter("n_pairs must be positive".into()));
        }
        let horizon = self.horizon;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut estimated_l: f64 = 0.0;
        let mut worst_pair = (0.0, horizon);
        for i in 0..n_pairs {
            let gap = if i % 2 == 0 {
                10f64.powf(rng.random_range(-6.0..-1.0)).min(horizon)
            } else {
                rng.random_range(0.0..1.0) * horizon
            }
            .max(horizon * 1e-9);
            let t = rng.random_range(0.0..1.0) * (horizon - gap);
            let ratio = self.singular_ratio(t, t + gap, gamma, epsilon)?;
            if ratio > estimated_l || !ratio.is_finite() {
                estimated_l = ratio;
                worst_pair = (t, t + gap);
            }
        }

        let anchor = 0.5 * horizon;
        let probe: Vec<(f64, f64)> = (2..=6)
            .map(|e| {
                let h = 10f64.powi(-e) * horizon;
                self.singular_ratio(anchor, anchor + h, gamma, epsilon)
                    .map(|r| (h.ln(), r.ln()))
            })
            .collect::<Result<_>>()?;
        let slope = if probe.iter().all(|(_, r)| r.is_finite()) {
            least_squares_slope(&probe)
        } else {
            f64::NEG_INFINITY
        };
        let diverges = slope < -DIVERGENCE_SLOPE_TOL;
        Ok(KernelAssumptionReport {
            assumption: AssumptionId::Singular,
            satisfied: estimated_l.is_finite() && !diverges,
            estimated_l,
            worst_pair,
            samples_checked: n_pairs,
            diagonal_lower_bound: None,
            divergence_slope: Some(slope),
        })
    }

    /// Finite-difference check of the smooth-kernel conditions on a 512-node
    /// grid, treating this kernel as both drift and diffusion kernel:
    /// bounded `d2 K`, a diagonal bounded away from zero, and bounded
    /// `d1 K`, `d2 K(s, s)` and `\int_s^t |d21 K|`.
    pub fn verify_assumption_smooth(&self) -> Result<KernelAssumptionReport> {
        if self.is_singular() {
            return Err(Error::SingularKernelRejected);
        }
        const NODES: usize = 512;
        let h = self.horizon / (NODES - 1) as f64;
        let u: Vec<f64> = (0..NODES).map(|i| i as f64 * h).collect();
        let k: Vec<f64> = u.iter().map(|&x| self.profile(x)).collect();
        // first derivative of the profile, one-sided at the ends
        let d1: Vec<f64> = (0..NODES)
            .map(|i| match i {
                0 => (k[1] - k[0]) / h,
                i if i == NODES - 1 => (k[i] - k[i - 1]) / h,
                i => (k[i + 1] - k[i - 1]) / (2.0 * h),
            })
            .collect();
        let d2: Vec<f64> = (0..NODES)
            .map(|i| {
                let i = i.clamp(1, NODES - 2);
                (k[i + 1] - 2.0 * k[i] + k[i - 1]) / (h * h)
            })
            .collect();

        // d2 K(s,t) = k'(t-s), d1 K(s,t) = -k'(t-s), d21 K(s,t) = -k''(t-s)
        let (arg_max, sup_d1) =
            d1.iter()
                .map(|v| v.abs())
                .enumerate()
                .fold((0, 0.0f64), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let diag_derivative = d1[0].abs();
        let mixed_integral: f64 = d2.windows(2).map(|w| 0.5 * (w[0].abs() + w[1].abs()) * h).sum();
        // K(t, t) = k(0) for every t on a convolution kernel
        let c1 = k[0].abs();
        let bound = sup_d1 + diag_derivative + mixed_integral;
        let finite = k.iter().chain(&d1).chain(&d2).all(|v| v.is_finite());
        Ok(KernelAssumptionReport {
            assumption: AssumptionId::Smooth,
            satisfied: finite && bound < SMOOTH_BOUND_CAP && c1 > 0.0,
            estimated_l: sup_d1.max(bound),
            worst_pair: (0.0, u[arg_max]),
            samples_checked: NODES,
            diagonal_lower_bound: Some(c1),
            divergence_slope: None,
        })
    }
}

/// Ratio slopes below `-DIVERGENCE_SLOPE_TOL` are read as divergence.
pub const DIVERGENCE_SLOPE_TOL: f64 = 0.01;
const SMOOTH_BOUND_CAP: f64 = 1e12;

/// Checks the convolutional alternative: both kernels share one bounded,
/// continuously differentiable profile `k(t - s)`.
pub fn verify_assumption_convolutional(k_mu: &KernelSpec, k_sigma: &KernelSpec) -> KernelAssumptionReport {
    let satisfied = !k_mu.is_singular() && k_mu == k_sigma;
    KernelAssumptionReport {
        assumption: AssumptionId::Convolutional,
        satisfied,
        estimated_l: if satisfied { 0.0 } else { f64::INFINITY },
        worst_pair: (0.0, k_mu.horizon()),
        samples_checked: 1,
        diagonal_lower_bound: None,
        divergence_slope: None,
    }
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionId {
    /// Hölder-type integrability, allows singular kernels.
    Singular,
    /// Smooth kernels with a non-degenerate diagonal.
    Smooth,
    /// Shared `C^1` convolution profile.
    Convolutional,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelAssumptionReport {
    pub assumption: AssumptionId,
    pub satisfied: bool,
    /// Smallest constant making every sampled inequality hold.
    pub estimated_l: f64,
    pub worst_pair: (f64, f64),
    pub samples_checked: usize,
    /// Minimum of `|K(t, t)|` (smooth check only).
    pub diagonal_lower_bound: Option<f64>,
    /// Log-log slope of the worst ratio against the gap (singular check only).
    pub divergence_slope: Option<f64>,
}
