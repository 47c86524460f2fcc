//! Empirical-measure convergence benchmark: how fast `E[W_delta(rhobar^N, rho)^delta]`
//! decays for i.i.d. samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::rates::{epsilon_n, RateFit, RateRegime, SLOPE_BAND};
use crate::measures::{wasserstein_1d_quantile_pow, EmpiricalMeasure, Estimator};
use crate::noise::{derive_seed, InitSampler};

/// Size of the reference cloud relative to `N`.
pub const REFERENCE_FACTOR: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GcRow {
    pub n: usize,
    /// Mean over replications of `W_delta^delta`.
    pub mean: f64,
    pub standard_error: f64,
    pub epsilon_n: f64,
    /// `mean / log2(1 + N)`, the fitted quantity at the critical dimension.
    pub log_divided: f64,
    pub estimator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GcTable {
    pub d: usize,
    pub delta: f64,
    pub regime: RateRegime,
    pub target_slope: f64,
    /// Whether the fit used `log_divided` instead of `mean`.
    pub fit_on_log_divided: bool,
    pub rows: Vec<GcRow>,
    pub fit: Option<RateFit>,
    pub within_band: Option<bool>,
}

impl GcTable {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["N", "mean", "standard_error", "epsilon_N", "log_divided", "estimator"])?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.mean.to_string(),
                r.standard_error.to_string(),
                r.epsilon_n.to_string(),
                r.log_divided.to_string(),
                r.estimator.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn draw(sampler: &InitSampler, n: usize, rng: &mut ChaCha8Rng) -> Result<EmpiricalMeasure> {
    let d = sampler.dim();
    let flat: Vec<f64> = (0..n).flat_map(|_| sampler.sample(rng)).collect();
    EmpiricalMeasure::new(ndarray::Array2::from_shape_vec((n, d), flat).expect("shape"))
}

/// Pairs an `N`-sample with an independent reference of `16 N` points
/// drawn from `sampler`, `n_reps` times per `N`. Scalar samples use the
/// exact quantile coupling against the whole reference; in higher
/// dimension the reference is subsampled to `N` (exact assignment up to
/// 512 points, sliced beyond).
pub fn glivenko_cantelli_benchmark(
    d: usize,
    delta: f64,
    n_list: &[usize],
    sampler: &InitSampler,
    n_reps: usize,
    seed: u64,
) -> Result<GcTable> {
    sampler.validate()?;
    if sampler.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: sampler.dim(),
        });
    }
    if !(delta >= 1.0) {
        return Err(Error::InvalidParameter(format!("delta must be >= 1, got {delta}")));
    }
    if n_reps == 0 || n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::InvalidParameter(
            "need replications and positive sample sizes".into(),
        ));
    }
    let regime = RateRegime::select(d, delta);
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let estimator = Estimator::for_shape(d, n);
        let values: Vec<f64> = (0..n_reps)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gc", r as u64));
                rng.set_stream(n as u64);
                let cloud = draw(sampler, n, &mut rng)?;
                let reference = draw(sampler, REFERENCE_FACTOR * n, &mut rng)?;
                if d == 1 {
                    wasserstein_1d_quantile_pow(delta, &cloud.scalars(), &reference.scalars())
                } else {
                    let sub = reference.subsample(n, derive_seed(seed, "gc-subsample", (n * n_reps + r) as u64))?;
                    estimator.distance_pow(delta, &cloud, &sub, derive_seed(seed, "gc-sliced", r as u64))
                }
            })
            .collect::<Result<_>>()?;
        let mean = values.iter().sum::<f64>() / n_reps as f64;
        let var = if n_reps > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_reps - 1) as f64
        } else {
            0.0
        };
        rows.push(GcRow {
            n,
            mean,
            standard_error: (var / n_reps as f64).sqrt(),
            epsilon_n: epsilon_n(d, delta, n),
            log_divided: mean / (1.0 + n as f64).log2(),
            estimator: estimator.to_string(),
        });
    }
    let fit_on_log_divided = regime == RateRegime::Critical;
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows
        .iter()
        .map(|r| if fit_on_log_divided { r.log_divided } else { r.mean })
        .collect();
    let target_slope = regime.exponent(d, delta);
    let fit = RateFit::fit(&ns, &ys);
    Ok(GcTable {
        d,
        delta,
        regime,
        target_slope,
        fit_on_log_divided,
        within_band: fit.map(|f| f.within(target_slope, SLOPE_BAND)),
        rows,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirac_sampler_gives_zero() {
        let t =
            glivenko_cantelli_benchmark(2, 1.0, &[4, 8, 16], &InitSampler::Dirac { x0: vec![1.0, 2.0] }, 3, 1).unwrap();
        assert!(t.rows.iter().all(|r| r.mean == 0.0));
        assert!(t.fit.is_none());
    }

    #[test]
    fn regime_and_targets() {
        let g = InitSampler::standard_gaussian(4);
        let t = glivenko_cantelli_benchmark(4, 2.0, &[8, 16, 32, 64], &g, 4, 1).unwrap();
        assert_eq!(t.regime, RateRegime::Critical);
        assert!(t.fit_on_log_divided);
        assert_eq!(t.target_slope, -0.5);
        let g = InitSampler::standard_gaussian(5);
        let t = glivenko_cantelli_benchmark(5, 1.0, &[8, 16], &g, 2, 1).unwrap();
        assert!((t.target_slope + 0.2).abs() < 1e-15);
        assert_eq!(t.rows[0].estimator, "exact");
    }

    #[test]
    fn scalar_two_point_law_decays_at_the_parametric_rate() {
        let tp = InitSampler::TwoPoint {
            lo: vec![0.0],
            hi: vec![1.0],
        };
        let t = glivenko_cantelli_benchmark(1, 2.0, &[64, 256, 1024, 4096], &tp, 64, 7).unwrap();
        assert!(t.within_band.unwrap(), "{:?}", t.fit);
    }
}
