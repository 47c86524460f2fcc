//! Path regularity and moment diagnostics on simulated ensembles.

use serde::Serialize;

use crate::engine::PathEnsemble;
use crate::error::{Error, Result};
use crate::harness::rates::RateFit;

/// Minimum ensemble size for the regularity fit.
pub const MIN_PATHS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderEstimate {
    /// Fitted slope divided by `q`.
    pub beta: f64,
    pub q: f64,
    pub fit: RateFit,
    /// `(h, E|X_{t+h} - X_t|^q)` averaged over anchors and paths.
    pub points: Vec<(f64, f64)>,
}

/// Regresses `log E|X_{t+h} - X_t|^q` on `log h`, averaging over every
/// anchor node `t` and every path. Lags are in grid steps.
pub fn holder_regularity_diagnostic(ensemble: &PathEnsemble, q: f64, lags: &[usize]) -> Result<HolderEstimate> {
    let m = ensemble.n_paths();
    if m < MIN_PATHS {
        return Err(Error::InsufficientPaths {
            needed: MIN_PATHS,
            got: m,
        });
    }
    if !(q > 0.0) {
        return Err(Error::InvalidParameter(format!("q must be positive, got {q}")));
    }
    let grid = ensemble.grid();
    let n = grid.n_steps();
    if lags.len() < 2 || lags.iter().any(|&l| l == 0 || l > n) {
        return Err(Error::InvalidParameter(format!(
            "need at least two lags in 1..={n}, got {lags:?}"
        )));
    }
    let states = ensemble.states();
    let d = ensemble.dim();
    let mut points = Vec::with_capacity(lags.len());
    for &lag in lags {
        let mut sum = 0.0;
        let mut count = 0usize;
        for p in 0..m {
            for k in 0..=n - lag {
                let sq: f64 = (0..d)
                    .map(|i| (states[[p, k + lag, i]] - states[[p, k, i]]).powi(2))
                    .sum();
                sum += sq.sqrt().powf(q);
                count += 1;
            }
        }
        points.push((lag as f64 * grid.dt(), sum / count as f64));
    }
    let (hs, vs): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let fit = RateFit::fit(&hs, &vs)
        .ok_or_else(|| Error::InvalidDiagnostic("increments vanish; no regularity exponent".into()))?;
    Ok(HolderEstimate {
        beta: fit.slope / q,
        q,
        fit,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub q: f64,
    /// `sup_k (1/M) sum_i |X^i_{t_k}|^q`.
    pub sup: f64,
    pub argmax_t: f64,
    pub median: f64,
    /// Largest node moment exceeds ten times the median node moment.
    pub blow_up: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentTable {
    pub rows: Vec<MomentRow>,
    pub blow_up_warning: bool,
}

/// Per-node empirical moments, their supremum over the grid and a
/// scheme-health flag.
pub fn moment_diagnostic(ensemble: &PathEnsemble, q_list: &[f64]) -> MomentTable {
    let grid = ensemble.grid();
    let states = ensemble.states();
    let (m, d) = (ensemble.n_paths(), ensemble.dim());
    let rows: Vec<MomentRow> = q_list
        .iter()
        .map(|&q| {
            let per_node: Vec<f64> = (0..grid.n_nodes())
                .map(|k| {
                    (0..m)
                        .map(|p| {
                            let sq: f64 = (0..d).map(|i| states[[p, k, i]].powi(2)).sum();
                            sq.sqrt().powf(q)
                        })
                        .sum::<f64>()
                        / m as f64
                })
                .collect();
            let (arg, sup) =
                per_node.iter().copied().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (k, v)| if v > acc.1 { (k, v) } else { acc },
                );
            let mut sorted = per_node.clone();
            sorted.sort_unstable_by(f64::total_cmp);
            let median = sorted[sorted.len() / 2];
            MomentRow {
                q,
                sup,
                argmax_t: grid.t(arg),
                median,
                blow_up: !sup.is_finite() || sup > 10.0 * median,
            }
        })
        .collect();
    MomentTable {
        blow_up_warning: rows.iter().any(|r| r.blow_up),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{DiffusionSpec, DriftSpec};
    use crate::engine::{simulate_frozen_law, Dynamics};
    use crate::grid::TimeGrid;
    use crate::kernels::KernelSpec;
    use crate::measures::{EmpiricalMeasure, LawFlow};
    use crate::noise::{InitSampler, NoisePlan};

    fn run(drift: DriftSpec, diffusion: DiffusionSpec, x0: f64, m: usize) -> PathEnsemble {
        let g = TimeGrid::new(1.0, 64).unwrap();
        let c = KernelSpec::constant(1.0, 1.0).unwrap();
        let dy = Dynamics::new(c.clone(), c, drift, diffusion).unwrap();
        let law = LawFlow::constant(g, EmpiricalMeasure::from_scalars(&[0.0]).unwrap());
        simulate_frozen_law(&g, &dy, &law, &InitSampler::dirac_scalar(x0), &NoisePlan::new(1), m).unwrap()
    }

    #[test]
    fn zero_dynamics_have_zero_moments() {
        let ens = run(DriftSpec::Zero, DiffusionSpec::ConstantVol { s: 0.0 }, 0.0, 10);
        let table = moment_diagnostic(&ens, &[1.0, 2.0]);
        assert!(table.rows.iter().all(|r| r.sup == 0.0));
        assert!(!table.blow_up_warning);
    }

    #[test]
    fn brownian_moments_and_regularity() {
        let ens = run(DriftSpec::Zero, DiffusionSpec::ConstantVol { s: 1.0 }, 0.0, 4000);
        let table = moment_diagnostic(&ens, &[2.0]);
        assert!((table.rows[0].sup - 1.0).abs() < 0.1);
        let est = holder_regularity_diagnostic(&ens, 2.0, &[1, 2, 4, 8]).unwrap();
        assert!((est.beta - 0.5).abs() < 0.05);
        assert!(matches!(
            holder_regularity_diagnostic(
                &run(DriftSpec::Zero, DiffusionSpec::ConstantVol { s: 1.0 }, 0.0, 10),
                2.0,
                &[1, 2]
            ),
            Err(Error::InsufficientPaths { .. })
        ));
    }
}
