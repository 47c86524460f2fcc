//! Mean-field limit and interacting particles.
//!
//! The limit law flow is the fixed point of the solution map `Phi`, which
//! sends a candidate flow `rho` to the law flow of the equation with `rho`
//! frozen in the coefficients. [`picard_solve`] iterates `Phi` on particle
//! clouds. [`simulate_particle_system`] runs the `N`-particle system, where
//! every particle reads the empirical measure of the current states, and
//! [`synchronous_coupling`] drives particles and limit copies with the same
//! initial draws and increments.

use std::io::Write;
use std::path::Path;

use ndarray::s;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    checksum_f64, draw_inputs, simulate_frozen_law_inputs, Dynamics, EnsembleKind, EnsembleMetadata, PathEnsemble,
    PathInput, PathState, Stepper,
};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::measures::{sorted_mean, EmpiricalMeasure, Estimator, LawFlow};
use crate::noise::{derive_seed, InitSampler, NoisePlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    /// Cloud size representing the law at each node.
    pub m_law: usize,
    /// Stop once `sup_t W_delta` between successive flows drops below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Wasserstein order used for the gaps.
    pub delta: f64,
    /// Reuse one noise plan across iterations.
    pub common_random_numbers: bool,
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_law < 2 {
            return Err(Error::InvalidParameter(format!(
                "m_law must be >= 2, got {}",
                self.m_law
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if !(self.delta >= 1.0) || !self.delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "delta must be >= 1, got {}",
                self.delta
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PicardResult {
    pub law: LawFlow,
    pub iterations_used: usize,
    /// `sup_t W_delta(rho^{k+1}_t, rho^k_t)` per iteration.
    pub gap_history: Vec<f64>,
    pub converged: bool,
    pub estimator: Estimator,
    /// Plan that drove the final iteration; reusing it applies `Phi` once more
    /// with the same randomness.
    pub noise: NoisePlan,
    pub config: PicardConfig,
}

/// Per-node moments of a law flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSummary {
    pub t: f64,
    pub mean: Vec<f64>,
    pub second_moment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardSummary {
    pub iterations_used: usize,
    pub gap_history: Vec<f64>,
    pub converged: bool,
    pub estimator: String,
    pub config: PicardConfig,
    pub nodes: Vec<NodeSummary>,
}

impl PicardResult {
    pub fn summary(&self) -> PicardSummary {
        let grid = self.law.grid();
        let nodes = self
            .law
            .measures()
            .iter()
            .enumerate()
            .map(|(k, m)| NodeSummary {
                t: grid.t(k),
                mean: m.mean(),
                second_moment: crate::measures::moment(m, 2.0).unwrap_or(f64::NAN),
            })
            .collect();
        PicardSummary {
            iterations_used: self.iterations_used,
            gap_history: self.gap_history.clone(),
            converged: self.converged,
            estimator: self.estimator.to_string(),
            config: self.config,
            nodes,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, &self.summary())?;
        Ok(())
    }

    /// Columns `t, mean_0.., second_moment`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let summary = self.summary();
        let d = self.law.dim();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|i| format!("mean_{i}")));
        header.push("second_moment".into());
        w.write_record(&header)?;
        for node in summary.nodes {
            let mut row = vec![node.t.to_string()];
            row.extend(node.mean.iter().map(|v| v.to_string()));
            row.push(node.second_moment.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fixed point of `Phi` by Picard iteration, starting from the constant flow
/// of the initial law.
pub fn picard_solve(
    grid: &TimeGrid,
    dynamics: &Dynamics,
    init: &InitSampler,
    cfg: &PicardConfig,
    master_seed: u64,
) -> Result<PicardResult> {
    cfg.validate()?;
    init.validate()?;
    let d = init.dim();
    let base = NoisePlan::new(master_seed).child("picard", 0);
    let streams: Vec<usize> = (0..cfg.m_law).collect();
    let base_inputs = draw_inputs(&base, init, grid, &streams);
    let x0 = ndarray::Array2::from_shape_fn((cfg.m_law, d), |(i, j)| base_inputs[i].x0[j]);
    let mut law = LawFlow::constant(*grid, EmpiricalMeasure::new(x0)?);
    let estimator = Estimator::for_shape(d, cfg.m_law);
    let mut gap_history = Vec::new();
    let mut plan = base;
    for iter in 1..=cfg.max_iters {
        let fresh;
        let inputs = if cfg.common_random_numbers {
            &base_inputs
        } else {
            plan = base.child("iteration", iter as u64);
            fresh = base_inputs
                .par_iter()
                .enumerate()
                .map(|(i, input)| PathInput {
                    x0: input.x0.clone(),
                    increments: plan.increments(i, grid, d),
                })
                .collect::<Vec<_>>();
            &fresh
        };
        let next = simulate_frozen_law_inputs(grid, dynamics, &law, inputs)?.law_flow();
        let gap = law.sup_distance(
            &next,
            cfg.delta,
            estimator,
            derive_seed(master_seed, "picard-gap", iter as u64),
        )?;
        gap_history.push(gap);
        law = next;
        if gap < cfg.tol {
            return Ok(PicardResult {
                law,
                iterations_used: iter,
                gap_history,
                converged: true,
                estimator,
                noise: plan,
                config: *cfg,
            });
        }
    }
    Err(Error::NotConverged { gap_history })
}

/// One more application of `Phi` with the randomness of the final Picard
/// iteration (common random numbers only).
pub fn apply_solution_map(
    grid: &TimeGrid,
    dynamics: &Dynamics,
    init: &InitSampler,
    result: &PicardResult,
) -> Result<LawFlow> {
    let streams: Vec<usize> = (0..result.config.m_law).collect();
    let inputs = draw_inputs(&result.noise, init, grid, &streams);
    Ok(simulate_frozen_law_inputs(grid, dynamics, &result.law, &inputs)?.law_flow())
}

/// `N` interacting particles; particle `i` uses noise stream `i`.
pub fn simulate_particle_system(
    n: usize,
    grid: &TimeGrid,
    dynamics: &Dynamics,
    init: &InitSampler,
    noise: &NoisePlan,
) -> Result<PathEnsemble> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one particle".into()));
    }
    init.validate()?;
    let streams: Vec<usize> = (0..n).collect();
    let inputs = draw_inputs(noise, init, grid, &streams);
    let mut ens = simulate_particle_system_inputs(grid, dynamics, &inputs)?;
    ens.metadata.seed = Some(noise.master_seed());
    Ok(ens)
}

/// Particle system from explicit inputs. At each step every particle reads
/// the empirical measure of the current states; the mean is summed in
/// sorted order, so relabelling the particles does not change any bit.
pub fn simulate_particle_system_inputs(
    grid: &TimeGrid,
    dynamics: &Dynamics,
    inputs: &[PathInput],
) -> Result<PathEnsemble> {
    let Some(first) = inputs.first() else {
        return Err(Error::InvalidParameter("need at least one particle".into()));
    };
    let d = first.x0.len();
    if let Some(bad) = inputs.iter().find(|p| p.x0.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.x0.len(),
        });
    }
    let stepper = Stepper::new(grid, dynamics, d)?;
    let mut states: Vec<PathState> = inputs.iter().map(|p| stepper.start(&p.x0)).collect();
    let mut ok = vec![true; inputs.len()];
    for k in 0..grid.n_steps() {
        let mean: Vec<f64> = (0..d)
            .map(|c| sorted_mean(states.iter().map(|st| st.state(k, d)[c])))
            .collect();
        states
            .par_iter_mut()
            .zip(inputs.par_iter())
            .zip(ok.par_iter_mut())
            .for_each(|((st, input), flag)| {
                *flag = stepper.advance(st, k, &mean, &input.increments[k * d..(k + 1) * d]);
            });
        if let Some(path) = ok.iter().position(|f| !f) {
            return Err(Error::NonFiniteState { path, step: k + 1 });
        }
    }
    Ok(PathEnsemble::assemble(
        *grid,
        d,
        states,
        EnsembleMetadata {
            kind: EnsembleKind::ParticleSystem,
            seed: None,
            spec_hash: dynamics.spec_hash(),
            dynamics: dynamics.clone(),
        },
    ))
}

/// How reference-cloud bias is removed from the Wasserstein column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DebiasMethod {
    /// Scalar case. The particle cloud is compared with the full reference
    /// cloud, whose own fluctuation is estimated from its two halves:
    /// `(raw^(2/delta) - companion^(2/delta) / 4)_+^(delta/2)`.
    QuantileVariance,
    /// Reference subsampled to `N`; companion is the distance between two
    /// disjoint size-`N` subsamples, subtracted directly.
    Subtract,
}

/// Per-node coupling errors for one particle count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingResult {
    pub n: usize,
    pub n_replications: usize,
    pub master_seed: u64,
    pub delta: f64,
    pub m_law: usize,
    pub estimator: String,
    pub debias: DebiasMethod,
    pub t: Vec<f64>,
    /// Mean over particles and replications of `|X^{N,i}_t - Xbar^i_t|^delta`.
    pub pathwise: Vec<f64>,
    /// Mean over replications of `W_delta(rhobar^N_t, reference_t)^delta`.
    pub wasserstein: Vec<f64>,
    /// Reference-only companion of `wasserstein`.
    pub companion: Vec<f64>,
    pub debiased: Vec<f64>,
    /// Digest of the inputs shared by particles and limit copies, per replication.
    pub input_checksums: Vec<u64>,
}

impl CouplingResult {
    fn sup(v: &[f64]) -> f64 {
        v.iter().copied().fold(0.0, f64::max)
    }

    pub fn sup_pathwise(&self) -> f64 {
        Self::sup(&self.pathwise)
    }

    pub fn sup_wasserstein(&self) -> f64 {
        Self::sup(&self.wasserstein)
    }

    pub fn sup_companion(&self) -> f64 {
        Self::sup(&self.companion)
    }

    pub fn sup_debiased(&self) -> f64 {
        Self::sup(&self.debiased)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(std::fs::File::create(path)?, self)?;
        Ok(())
    }

    /// Columns `t, pathwise, wasserstein, companion, debiased`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "pathwise", "wasserstein", "companion", "debiased"])?;
        for k in 0..self.t.len() {
            w.write_record([
                self.t[k].to_string(),
                self.pathwise[k].to_string(),
                self.wasserstein[k].to_string(),
                self.companion[k].to_string(),
                self.debiased[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Inputs of replication `r` of a coupling experiment.
pub fn replication_inputs(master_seed: u64, r: usize, n: usize, grid: &TimeGrid, init: &InitSampler) -> Vec<PathInput> {
    let plan = NoisePlan::new(master_seed).child("replication", r as u64);
    let streams: Vec<usize> = (0..n).collect();
    draw_inputs(&plan, init, grid, &streams)
}

struct Replication {
    pathwise: Vec<f64>,
    wasserstein: Vec<f64>,
    companion: Vec<f64>,
    checksum: u64,
}

/// Drives `N` particles and `N` limit copies (against `reference`) with the
/// same initial draws and increments, averaging the errors over replications.
#[allow(clippy::too_many_arguments)]
pub fn synchronous_coupling(
    n: usize,
    grid: &TimeGrid,
    dynamics: &Dynamics,
    init: &InitSampler,
    reference: &LawFlow,
    n_replications: usize,
    master_seed: u64,
    delta: f64,
) -> Result<CouplingResult> {
    synchronous_coupling_with(
        n,
        grid,
        dynamics,
        init,
        reference,
        n_replications,
        master_seed,
        delta,
        None,
    )
}

/// [`synchronous_coupling`] with a forced multi-dimensional estimator.
/// Scalar runs always use the exact sorted coupling.
#[allow(clippy::too_many_arguments)]
pub fn synchronous_coupling_with(
    n: usize,
    grid: &TimeGrid,
    dynamics: &Dynamics,
    init: &InitSampler,
    reference: &LawFlow,
    n_replications: usize,
    master_seed: u64,
    delta: f64,
    estimator: Option<Estimator>,
) -> Result<CouplingResult> {
    let m_law = reference.cloud_size();
    if m_law < 4 * n {
        return Err(Error::ReferenceTooSmall { m_law, n });
    }
    if n_replications == 0 {
        return Err(Error::InvalidParameter("need at least one replication".into()));
    }
    if !(delta >= 1.0) {
        return Err(Error::InvalidParameter(format!("delta must be >= 1, got {delta}")));
    }
    init.validate()?;
    let d = reference.dim();
    let nodes = grid.n_nodes();
    let scalar = d == 1;
    let estimator = if scalar {
        Estimator::Sorted1d
    } else {
        estimator.unwrap_or_else(|| Estimator::for_shape(d, n))
    };
    let ref_scalars: Vec<Vec<f64>> = if scalar {
        reference.measures().par_iter().map(|m| m.scalars()).collect()
    } else {
        Vec::new()
    };

    let replications: Vec<Replication> = (0..n_replications)
        .into_par_iter()
        .map(|r| -> Result<Replication> {
            let inputs = replication_inputs(master_seed, r, n, grid, init);
            let checksum = inputs.iter().fold(0u64, |h, p| {
                h.rotate_left(5) ^ p.increments_checksum() ^ checksum_f64(&p.x0)
            });
            let particles = simulate_particle_system_inputs(grid, dynamics, &inputs)?;
            let limit = simulate_frozen_law_inputs(grid, dynamics, reference, &inputs)?;
            let (ps, ls) = (particles.states(), limit.states());
            let mut pathwise = vec![0.0; nodes];
            let mut wasserstein = vec![0.0; nodes];
            let mut companion = vec![0.0; nodes];
            for k in 0..nodes {
                let errs: Vec<f64> = (0..n)
                    .map(|i| {
                        let diff = &ps.slice(s![i, k, ..]) - &ls.slice(s![i, k, ..]);
                        diff.dot(&diff).sqrt().powf(delta)
                    })
                    .collect();
                pathwise[k] = errs.iter().sum::<f64>() / n as f64;
                let cloud = particles.marginal(k);
                if scalar {
                    wasserstein[k] =
                        crate::measures::wasserstein_1d_quantile_pow(delta, &cloud.scalars(), &ref_scalars[k])?;
                } else {
                    let node = (r * nodes + k) as u64;
                    let split = reference
                        .at(k)
                        .subsample(3 * n, derive_seed(master_seed, "reference-subsample", node))?;
                    let a = split.slice_rows(0..n)?;
                    let b = split.slice_rows(n..2 * n)?;
                    let c = split.slice_rows(2 * n..3 * n)?;
                    let seed = derive_seed(master_seed, "sliced", node);
                    wasserstein[k] = estimator.distance_pow(delta, &cloud, &a, seed)?;
                    companion[k] = estimator.distance_pow(delta, &b, &c, seed)?;
                }
            }
            Ok(Replication {
                pathwise,
                wasserstein,
                companion,
                checksum,
            })
        })
        .collect::<Result<_>>()?;

    let average = |f: &dyn Fn(&Replication) -> &Vec<f64>| -> Vec<f64> {
        (0..nodes)
            .map(|k| replications.iter().map(|r| f(r)[k]).sum::<f64>() / n_replications as f64)
            .collect()
    };
    let pathwise = average(&|r| &r.pathwise);
    let wasserstein = average(&|r| &r.wasserstein);
    let (companion, debiased, debias) = if scalar {
        let half = m_law / 2;
        let companion: Vec<f64> = ref_scalars
            .par_iter()
            .map(|xs| crate::measures::wasserstein_1d_pow(delta, &xs[..half], &xs[half..2 * half]))
            .collect::<Result<_>>()?;
        let debiased = wasserstein
            .iter()
            .zip(&companion)
            .map(|(&raw, &comp)| {
                let e = 2.0 / delta;
                (raw.powf(e) - comp.powf(e) / 4.0).max(0.0).powf(1.0 / e)
            })
            .collect();
        (companion, debiased, DebiasMethod::QuantileVariance)
    } else {
        let companion = average(&|r| &r.companion);
        let debiased = wasserstein
            .iter()
            .zip(&companion)
            .map(|(a, b)| (a - b).max(0.0))
            .collect();
        (companion, debiased, DebiasMethod::Subtract)
    };
    Ok(CouplingResult {
        n,
        n_replications,
        master_seed,
        delta,
        m_law,
        estimator: estimator.to_string(),
        debias,
        t: grid.nodes().collect(),
        pathwise,
        wasserstein,
        companion,
        debiased,
        input_checksums: replications.iter().map(|r| r.checksum).collect(),
    })
}

fn check_permutation(n: usize, permutation: &[usize]) -> Result<()> {
    let mut seen = vec![false; n];
    if permutation.len() != n
        || permutation
            .iter()
            .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::InvalidParameter(
            "permutation must be a bijection of 0..N".into(),
        ));
    }
    Ok(())
}

fn permuted_rerun(
    n: usize,
    grid: &TimeGrid,
    dynamics: &Dynamics,
    init: &InitSampler,
    master_seed: u64,
    permutation: &[usize],
    permute_init: bool,
) -> Result<bool> {
    check_permutation(n, permutation)?;
    let plan = NoisePlan::new(master_seed);
    let streams: Vec<usize> = (0..n).collect();
    let inputs = draw_inputs(&plan, init, grid, &streams);
    let base = simulate_particle_system_inputs(grid, dynamics, &inputs)?;
    let permuted: Vec<PathInput> = (0..n)
        .map(|i| PathInput {
            x0: inputs[if permute_init { permutation[i] } else { i }].x0.clone(),
            increments: inputs[permutation[i]].increments.clone(),
        })
        .collect();
    let rerun = simulate_particle_system_inputs(grid, dynamics, &permuted)?;
    Ok((0..n).all(|i| {
        rerun
            .path(i)
            .iter()
            .zip(base.path(permutation[i]).iter())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }))
}

/// True iff relabelling the particles (initial draws and noise streams
/// together) relabels the simulated paths, bit for bit. `permutation` is
/// 0-based: new particle `i` takes the inputs of old particle `permutation[i]`.
pub fn exchangeability_check(
    n: usize,
    grid: &TimeGrid,
    dynamics: &Dynamics,
    init: &InitSampler,
    master_seed: u64,
    permutation: &[usize],
) -> Result<bool> {
    permuted_rerun(n, grid, dynamics, init, master_seed, permutation, true)
}

/// Like [`exchangeability_check`] but permutes only the noise streams and
/// keeps the initial draws in place; fails for non-degenerate initial laws.
pub fn exchangeability_check_increments_only(
    n: usize,
    grid: &TimeGrid,
    dynamics: &Dynamics,
    init: &InitSampler,
    master_seed: u64,
    permutation: &[usize],
) -> Result<bool> {
    permuted_rerun(n, grid, dynamics, init, master_seed, permutation, false)
}
