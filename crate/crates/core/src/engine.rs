//! Explicit Euler-type scheme for stochastic Volterra equations
//!
//! ```text
//! X_{t_k} = X_0 + sum_{j<k} w^mu_{j,k} mu(t_j, X_{t_j}, rho_{t_j})
//!               + sum_{j<k} w^sigma_{j,k} sigma(t_j, X_{t_j}, rho_{t_j}) dB_j
//! ```
//!
//! Because the weights depend on the target index `k`, every step re-sums the
//! whole history: `O(n^2)` work per path. Paths are independent given the law
//! flow and are simulated in parallel; results do not depend on the number
//! of worker threads.

use std::io::Write;

use ndarray::{s, Array3, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{DiffusionSpec, DriftSpec};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernels::{DiffusionWeightMode, KernelFamily, KernelSpec};
use crate::measures::{EmpiricalMeasure, LawFlow};
use crate::noise::{InitSampler, NoisePlan};

/// Kernels, coefficients and the diffusion weight rule of one equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dynamics {
    pub k_mu: KernelSpec,
    pub k_sigma: KernelSpec,
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    pub mode: DiffusionWeightMode,
    /// Use the running recursion for exponential kernels instead of
    /// re-summing the history.
    pub convolution_fast_path: bool,
}

impl Dynamics {
    pub fn new(k_mu: KernelSpec, k_sigma: KernelSpec, drift: DriftSpec, diffusion: DiffusionSpec) -> Result<Self> {
        diffusion.validate()?;
        k_sigma
            .check_square_integrable()
            .map_err(|e| Error::Admissibility(format!("diffusion kernel: {e}")))?;
        let mode = k_sigma.default_diffusion_mode();
        Ok(Self {
            k_mu,
            k_sigma,
            drift,
            diffusion,
            mode,
            convolution_fast_path: false,
        })
    }

    pub fn with_mode(mut self, mode: DiffusionWeightMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_fast_path(mut self, on: bool) -> Self {
        self.convolution_fast_path = on;
        self
    }

    pub fn depends_on_measure(&self) -> bool {
        self.drift.depends_on_measure() || self.diffusion.depends_on_measure()
    }

    /// Stable 64-bit digest of the specs, written into path dumps.
    pub fn spec_hash(&self) -> u64 {
        fnv1a(serde_json::to_string(self).expect("specs serialize").as_bytes())
    }
}

/// FNV-1a over raw bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Digest of a sequence of floats by bit pattern.
pub fn checksum_f64<'a>(values: impl IntoIterator<Item = &'a f64>) -> u64 {
    values.into_iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
        v.to_bits()
            .to_le_bytes()
            .iter()
            .fold(h, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
    })
}

/// Initial state and Brownian increments (step-major, `n_steps * d`) of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathInput {
    pub x0: Vec<f64>,
    pub increments: Vec<f64>,
}

impl PathInput {
    pub fn draw(plan: &NoisePlan, stream: usize, init: &InitSampler, grid: &TimeGrid) -> Self {
        let mut rng = plan.init_rng(stream);
        let x0 = init.sample(&mut rng);
        let increments = plan.increments(stream, grid, x0.len());
        Self { x0, increments }
    }

    pub fn increments_checksum(&self) -> u64 {
        checksum_f64(&self.increments)
    }
}

/// Inputs for the given streams, drawn in parallel.
pub fn draw_inputs(plan: &NoisePlan, init: &InitSampler, grid: &TimeGrid, streams: &[usize]) -> Vec<PathInput> {
    streams
        .par_iter()
        .map(|&s| PathInput::draw(plan, s, init, grid))
        .collect()
}

pub(crate) struct PathState {
    x0: Vec<f64>,
    states: Vec<f64>,
    drift_hist: Vec<f64>,
    noise_hist: Vec<f64>,
    run_mu: Vec<f64>,
    run_sigma: Vec<f64>,
    sigma: Vec<f64>,
}

impl PathState {
    pub(crate) fn state(&self, k: usize, d: usize) -> &[f64] {
        &self.states[k * d..(k + 1) * d]
    }
}

/// Precomputed lag weights plus the per-step update.
pub(crate) struct Stepper {
    dim: usize,
    grid: TimeGrid,
    drift_w: Vec<f64>,
    diff_w: Vec<f64>,
    decay: Option<(f64, f64)>,
    drift: DriftSpec,
    diffusion: DiffusionSpec,
}

impl Stepper {
    pub(crate) fn new(grid: &TimeGrid, dynamics: &Dynamics, dim: usize) -> Result<Self> {
        let n = grid.n_steps();
        let dt = grid.dt();
        for k in [&dynamics.k_mu, &dynamics.k_sigma] {
            if grid.horizon() > k.horizon() * (1.0 + 1e-12) {
                return Err(Error::OutOfDomain {
                    s: 0.0,
                    t: grid.horizon(),
                    horizon: k.horizon(),
                });
            }
        }
        let drift_w: Vec<f64> = (1..=n).map(|l| dynamics.k_mu.drift_lag_weight(l, dt)).collect();
        let diff_w: Vec<f64> = (1..=n)
            .map(|l| dynamics.k_sigma.diffusion_lag_weight(l, dt, dynamics.mode))
            .collect::<Result<_>>()?;
        let decay = if dynamics.convolution_fast_path {
            match (dynamics.k_mu.exponential_decay(), dynamics.k_sigma.exponential_decay()) {
                (Some(a), Some(b)) => Some(((-a * dt).exp(), (-b * dt).exp())),
                _ => None,
            }
        } else {
            None
        };
        Ok(Self {
            dim,
            grid: *grid,
            drift_w,
            diff_w,
            decay,
            drift: dynamics.drift,
            diffusion: dynamics.diffusion,
        })
    }

    pub(crate) fn start(&self, x0: &[f64]) -> PathState {
        let (n, d) = (self.grid.n_steps(), self.dim);
        let mut states = vec![0.0; (n + 1) * d];
        states[..d].copy_from_slice(x0);
        PathState {
            x0: x0.to_vec(),
            states,
            drift_hist: vec![0.0; n * d],
            noise_hist: vec![0.0; n * d],
            run_mu: vec![0.0; d],
            run_sigma: vec![0.0; d],
            sigma: vec![0.0; d],
        }
    }

    /// Evaluates the coefficients at `t_k` and writes `X_{t_{k+1}}`.
    /// Returns `false` if the new state is not finite.
    pub(crate) fn advance(&self, st: &mut PathState, k: usize, mean: &[f64], db: &[f64]) -> bool {
        let d = self.dim;
        let t = self.grid.t(k);
        let (head, tail) = st.states.split_at_mut((k + 1) * d);
        let x = &head[k * d..];
        self.drift
            .eval_with_mean(t, x, mean, &mut st.drift_hist[k * d..(k + 1) * d]);
        self.diffusion.diag_with_mean(x, mean, &mut st.sigma);
        for i in 0..d {
            st.noise_hist[k * d + i] = st.sigma[i] * db[i];
        }
        let next = &mut tail[..d];
        match self.decay {
            Some((dm, ds)) => {
                for i in 0..d {
                    st.run_mu[i] = dm * st.run_mu[i] + self.drift_w[0] * st.drift_hist[k * d + i];
                    st.run_sigma[i] = ds * st.run_sigma[i] + self.diff_w[0] * st.noise_hist[k * d + i];
                    next[i] = st.x0[i] + st.run_mu[i] + st.run_sigma[i];
                }
            }
            None => {
                if d == 1 {
                    let mut acc_mu = 0.0;
                    let mut acc_sigma = 0.0;
                    for j in 0..=k {
                        acc_mu += self.drift_w[k - j] * st.drift_hist[j];
                        acc_sigma += self.diff_w[k - j] * st.noise_hist[j];
                    }
                    next[0] = st.x0[0] + acc_mu + acc_sigma;
                } else {
                    st.run_mu.fill(0.0);
                    st.run_sigma.fill(0.0);
                    for j in 0..=k {
                        let (wm, ws) = (self.drift_w[k - j], self.diff_w[k - j]);
                        for i in 0..d {
                            st.run_mu[i] += wm * st.drift_hist[j * d + i];
                            st.run_sigma[i] += ws * st.noise_hist[j * d + i];
                        }
                    }
                    for i in 0..d {
                        next[i] = st.x0[i] + st.run_mu[i] + st.run_sigma[i];
                    }
                }
            }
        }
        next.iter().all(|v| v.is_finite())
    }
}

/// What produced an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleMetadata {
    pub kind: EnsembleKind,
    pub seed: Option<u64>,
    pub spec_hash: u64,
    pub dynamics: Dynamics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    FrozenLaw,
    ParticleSystem,
}

/// `M` sample paths with their full state history on the grid.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    states: Array3<f64>,
    drift_values: Array3<f64>,
    diffusion_increments: Array3<f64>,
    pub metadata: EnsembleMetadata,
}

impl PathEnsemble {
    pub(crate) fn assemble(grid: TimeGrid, dim: usize, paths: Vec<PathState>, metadata: EnsembleMetadata) -> Self {
        let (m, n) = (paths.len(), grid.n_steps());
        let mut states = Vec::with_capacity(m * (n + 1) * dim);
        let mut drift = Vec::with_capacity(m * n * dim);
        let mut noise = Vec::with_capacity(m * n * dim);
        for p in paths {
            states.extend_from_slice(&p.states);
            drift.extend_from_slice(&p.drift_hist);
            noise.extend_from_slice(&p.noise_hist);
        }
        Self {
            grid,
            states: Array3::from_shape_vec((m, n + 1, dim), states).expect("shape"),
            drift_values: Array3::from_shape_vec((m, n, dim), drift).expect("shape"),
            diffusion_increments: Array3::from_shape_vec((m, n, dim), noise).expect("shape"),
            metadata,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.states.shape()[2]
    }

    /// `paths x nodes x dim`.
    pub fn states(&self) -> &Array3<f64> {
        &self.states
    }

    /// `mu(t_j, X_{t_j}, rho_{t_j})`, `paths x steps x dim`.
    pub fn drift_values(&self) -> &Array3<f64> {
        &self.drift_values
    }

    /// `sigma(t_j, X_{t_j}, rho_{t_j}) dB_j`, `paths x steps x dim`.
    pub fn diffusion_increments(&self) -> &Array3<f64> {
        &self.diffusion_increments
    }

    pub fn path(&self, i: usize) -> ArrayView2<'_, f64> {
        self.states.slice(s![i, .., ..])
    }

    /// Empirical law of the states at node `k`.
    pub fn marginal(&self, k: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::new(self.states.slice(s![.., k, ..]).to_owned()).expect("finite states")
    }

    pub fn law_flow(&self) -> LawFlow {
        let measures = (0..self.grid.n_nodes()).map(|k| self.marginal(k)).collect();
        LawFlow::new(self.grid, measures).expect("consistent ensemble")
    }

    pub fn checksum(&self) -> u64 {
        checksum_f64(self.states.iter())
    }

    /// Row per path; columns are nodes (`d = 1`) or node-major blocks of
    /// `d` coordinates, preceded by a `#` line with grid, seed and spec hash.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(
            writer,
            "# horizon={} n_steps={} seed={} spec_hash={:016x}",
            self.grid.horizon(),
            self.grid.n_steps(),
            self.metadata.seed.map_or("none".to_string(), |s| s.to_string()),
            self.metadata.spec_hash
        )?;
        let d = self.dim();
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (0..self.grid.n_nodes())
            .flat_map(|k| (0..d).map(move |i| if d == 1 { format!("t{k}") } else { format!("t{k}_x{i}") }))
            .collect();
        w.write_record(&header)?;
        for path in self.states.outer_iter() {
            w.write_record(path.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every path against a fixed law flow, from explicit inputs.
pub fn simulate_frozen_law_inputs(
    grid: &TimeGrid,
    dynamics: &Dynamics,
    law: &LawFlow,
    inputs: &[PathInput],
) -> Result<PathEnsemble> {
    if law.grid() != grid {
        return Err(Error::InvalidParameter("law flow lives on a different grid".into()));
    }
    let d = law.dim();
    if let Some(bad) = inputs.iter().find(|p| p.x0.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.x0.len(),
        });
    }
    let stepper = Stepper::new(grid, dynamics, d)?;
    let means: Vec<Vec<f64>> = law.measures().par_iter().map(|m| m.mean()).collect();
    let n = grid.n_steps();
    let outcomes: Vec<(PathState, Option<usize>)> = inputs
        .par_iter()
        .map(|input| {
            let mut st = stepper.start(&input.x0);
            for k in 0..n {
                if !stepper.advance(&mut st, k, &means[k], &input.increments[k * d..(k + 1) * d]) {
                    return (st, Some(k + 1));
                }
            }
            (st, None)
        })
        .collect();
    if let Some((path, (_, Some(step)))) = outcomes.iter().enumerate().find(|(_, o)| o.1.is_some()) {
        return Err(Error::NonFiniteState { path, step: *step });
    }
    Ok(PathEnsemble::assemble(
        *grid,
        d,
        outcomes.into_iter().map(|(s, _)| s).collect(),
        EnsembleMetadata {
            kind: EnsembleKind::FrozenLaw,
            seed: None,
            spec_hash: dynamics.spec_hash(),
            dynamics: dynamics.clone(),
        },
    ))
}

/// Simulates `m` paths of the equation with the law flow `law` frozen in
/// the coefficients; path `i` uses noise stream `i`.
pub fn simulate_frozen_law(
    grid: &TimeGrid,
    dynamics: &Dynamics,
    law: &LawFlow,
    init: &InitSampler,
    noise: &NoisePlan,
    m: usize,
) -> Result<PathEnsemble> {
    if m == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    init.validate()?;
    let streams: Vec<usize> = (0..m).collect();
    let inputs = draw_inputs(noise, init, grid, &streams);
    let mut ens = simulate_frozen_law_inputs(grid, dynamics, law, &inputs)?;
    ens.metadata.seed = Some(noise.master_seed());
    Ok(ens)
}

/// Per-node outcome of [`martingale_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeCheck {
    pub t: f64,
    pub mean: f64,
    pub standard_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub nodes: Vec<NodeCheck>,
    /// Set when `M = 1`: the sample deviation is undefined.
    pub inconclusive: bool,
    pub passed: bool,
}

/// For driftless runs with a constant diffusion kernel, `X_t - X_0` is a
/// martingale: checks every node mean against four standard errors
/// (per coordinate, worst coordinate reported).
pub fn martingale_check(ensemble: &PathEnsemble) -> Result<MartingaleReport> {
    let dynamics = &ensemble.metadata.dynamics;
    if dynamics.drift != DriftSpec::Zero {
        return Err(Error::InvalidDiagnostic("martingale check needs zero drift".into()));
    }
    if !matches!(dynamics.k_sigma.family(), KernelFamily::Constant { .. }) {
        return Err(Error::InvalidDiagnostic(
            "martingale check needs a constant diffusion kernel".into(),
        ));
    }
    let m = ensemble.n_paths();
    let grid = ensemble.grid();
    if m < 2 {
        return Ok(MartingaleReport {
            nodes: Vec::new(),
            inconclusive: true,
            passed: false,
        });
    }
    let states = ensemble.states();
    let d = ensemble.dim();
    let mut nodes = Vec::with_capacity(grid.n_nodes());
    for k in 0..grid.n_nodes() {
        let mut worst = NodeCheck {
            t: grid.t(k),
            mean: 0.0,
            standard_error: 0.0,
            pass: true,
        };
        for i in 0..d {
            let diffs: Vec<f64> = (0..m).map(|p| states[[p, k, i]] - states[[p, 0, i]]).collect();
            let mean = diffs.iter().sum::<f64>() / m as f64;
            let var = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            let se = (var / m as f64).sqrt();
            let pass = mean.abs() <= 4.0 * se;
            if !pass || mean.abs() > worst.mean.abs() {
                worst = NodeCheck {
                    t: grid.t(k),
                    mean,
                    standard_error: se,
                    pass: pass && worst.pass,
                };
            }
        }
        nodes.push(worst);
    }
    let passed = nodes.iter().all(|n| n.pass);
    Ok(MartingaleReport {
        nodes,
        inconclusive: false,
        passed,
    })
}
