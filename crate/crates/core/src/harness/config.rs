//! Versioned JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coefficients::{DiffusionSpec, DriftSpec};
use crate::engine::{fnv1a, Dynamics};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::harness::rates::delta_from_epsilon;
use crate::kernels::{
    verify_assumption_convolutional, DiffusionWeightMode, KernelAssumptionReport, KernelFamily, KernelSpec,
};
use crate::mckean::PicardConfig;
use crate::measures::Estimator;
use crate::noise::InitSampler;

/// The only accepted value of the `schema` field.
pub const SCHEMA: &str = "volterra-chaos/v1";

/// Which well-posedness regime an experiment claims.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Lipschitz coefficients in any dimension, possibly singular kernels,
    /// errors in `W_delta` with `delta = (4 + 2 eps) / eps`.
    LipschitzMultiD,
    /// Scalar equations with Hölder diffusion and regular kernels, errors in `W_1`.
    HolderOneD,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelsConfig {
    pub drift: KernelFamily,
    pub diffusion: KernelFamily,
    /// Defaults to variance matching for singular kernels, left point otherwise.
    #[serde(default)]
    pub diffusion_weights: Option<DiffusionWeightMode>,
    /// Running recursion for exponential kernels.
    #[serde(default)]
    pub fast_path: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSettings {
    pub m_law: usize,
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default = "default_true")]
    pub common_random_numbers: bool,
}

fn default_true() -> bool {
    true
}

/// Estimator for clouds in dimension `d >= 2` (scalar runs always sort).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorPolicy {
    /// Exact assignment up to 512 points, sliced beyond.
    #[default]
    Auto,
    Exact,
    Sliced {
        projections: usize,
    },
}

impl EstimatorPolicy {
    pub fn forced(&self) -> Option<Estimator> {
        match *self {
            EstimatorPolicy::Auto => None,
            EstimatorPolicy::Exact => Some(Estimator::Exact),
            EstimatorPolicy::Sliced { projections } => Some(Estimator::Sliced { projections }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub setting: Setting,
    pub grid: GridConfig,
    pub kernels: KernelsConfig,
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    pub init: InitSampler,
    pub n_list: Vec<usize>,
    pub replications: usize,
    pub picard: PicardSettings,
    /// Integrability exponent (Lipschitz setting only).
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Hölder exponent of the kernels; defaults to the largest value the
    /// kernel family supports for `epsilon`.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Moment index; recorded only.
    #[serde(default)]
    pub p: Option<f64>,
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub estimator: EstimatorPolicy,
}

/// Outcome of the kernel and coefficient checks for the claimed setting.
/// Kernel conditions are reported, not enforced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Admissibility {
    pub setting: Setting,
    pub delta: f64,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    /// `max(1/gamma, 1 + 2/eps)`; any admissible `p` exceeds it.
    pub p_lower_bound: Option<f64>,
    pub p: Option<f64>,
    pub kernel_checks: Vec<(String, KernelAssumptionReport)>,
    pub kernels_satisfied: bool,
    pub notes: Vec<String>,
}

/// A checked configuration with every derived object built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub grid: TimeGrid,
    pub dynamics: Dynamics,
    pub picard: PicardConfig,
    pub delta: f64,
    pub admissibility: Admissibility,
    pub config_hash: u64,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dim(&self) -> usize {
        self.init.dim()
    }

    /// Validates the configuration and builds grid, dynamics and Picard settings.
    pub fn build(&self) -> Result<Experiment> {
        if self.schema != SCHEMA {
            return Err(config_err(format!(
                "unsupported schema {:?}, expected {SCHEMA:?}",
                self.schema
            )));
        }
        if self.n_list.len() < 4 {
            return Err(config_err(format!(
                "n_list needs at least 4 entries for a rate fit, got {}",
                self.n_list.len()
            )));
        }
        if self.n_list[0] < 2 || self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("n_list must be strictly increasing with entries >= 2"));
        }
        if self.replications == 0 {
            return Err(config_err("replications must be positive"));
        }
        if let EstimatorPolicy::Sliced { projections: 0 } = self.estimator {
            return Err(config_err("sliced estimator needs at least one projection"));
        }
        let grid = TimeGrid::new(self.grid.horizon, self.grid.n_steps)?;
        self.init.validate()?;
        self.diffusion.validate()?;
        let d = self.dim();
        let k_mu = KernelSpec::new(self.kernels.drift.clone(), grid.horizon())?;
        let k_sigma = KernelSpec::new(self.kernels.diffusion.clone(), grid.horizon())?;
        let mut dynamics =
            Dynamics::new(k_mu, k_sigma, self.drift, self.diffusion)?.with_fast_path(self.kernels.fast_path);
        if let Some(mode) = self.kernels.diffusion_weights {
            dynamics = dynamics.with_mode(mode);
        }

        let mut notes = Vec::new();
        let mut kernel_checks = Vec::new();
        let (delta, epsilon, gamma, p_lower_bound) = match self.setting {
            Setting::LipschitzMultiD => {
                let eps = self
                    .epsilon
                    .ok_or_else(|| config_err("the Lipschitz setting needs epsilon"))?;
                let delta = delta_from_epsilon(eps)?;
                if self.diffusion.holder_exponent() < 1.0 {
                    return Err(Error::Admissibility(
                        "the Lipschitz setting needs a Lipschitz diffusion coefficient".into(),
                    ));
                }
                let gamma = match self.gamma {
                    Some(g) => Some(g),
                    None => [&dynamics.k_mu, &dynamics.k_sigma]
                        .iter()
                        .map(|k| k.claimed_gamma(eps))
                        .try_fold(0.5, |acc: f64, g| g.map(|g| acc.min(g))),
                };
                match gamma {
                    Some(gamma) => {
                        if !(gamma > 0.0 && gamma <= 0.5) {
                            return Err(config_err(format!("gamma must lie in (0, 1/2], got {gamma}")));
                        }
                        for (role, k) in [("drift", &dynamics.k_mu), ("diffusion", &dynamics.k_sigma)] {
                            let report = k.verify_assumption_singular(gamma, eps, 256, self.master_seed)?;
                            if !report.satisfied {
                                notes.push(format!(
                                    "{role} kernel does not satisfy the integrability condition for gamma = {gamma}, eps = {eps}"
                                ));
                            }
                            kernel_checks.push((role.to_string(), report));
                        }
                    }
                    None => notes.push(format!(
                        "no positive gamma satisfies the integrability condition with eps = {eps} for these kernels"
                    )),
                }
                (delta, Some(eps), gamma, gamma.map(|g| (1.0 / g).max(1.0 + 2.0 / eps)))
            }
            Setting::HolderOneD => {
                if d != 1 {
                    return Err(Error::Admissibility(format!(
                        "the Hölder setting is scalar, got d = {d}"
                    )));
                }
                if self.diffusion.depends_on_measure() {
                    return Err(Error::Admissibility(
                        "the Hölder setting needs a measure-free diffusion coefficient".into(),
                    ));
                }
                if self.epsilon.is_some() || self.gamma.is_some() {
                    notes.push("epsilon and gamma play no role in the Hölder setting".into());
                }
                let conv = verify_assumption_convolutional(&dynamics.k_mu, &dynamics.k_sigma);
                let satisfied = if conv.satisfied {
                    kernel_checks.push(("shared".to_string(), conv));
                    true
                } else {
                    let mut all = !dynamics.k_mu.is_singular();
                    for (role, k) in [("drift", &dynamics.k_mu), ("diffusion", &dynamics.k_sigma)] {
                        match k.verify_assumption_smooth() {
                            Ok(report) => {
                                all &= report.satisfied;
                                kernel_checks.push((role.to_string(), report));
                            }
                            Err(Error::SingularKernelRejected) => all = false,
                            Err(e) => return Err(e),
                        }
                    }
                    all
                };
                if !satisfied {
                    notes.push("kernels satisfy neither the smooth nor the convolutional condition".into());
                }
                (1.0, None, None, None)
            }
        };
        if let (Some(p), Some(bound)) = (self.p, p_lower_bound) {
            if p <= bound {
                return Err(config_err(format!(
                    "p = {p} must exceed max(1/gamma, 1 + 2/eps) = {bound}"
                )));
            }
        }
        let picard = PicardConfig {
            m_law: self.picard.m_law,
            tol: self.picard.tol,
            max_iters: self.picard.max_iters,
            delta,
            common_random_numbers: self.picard.common_random_numbers,
        };
        picard.validate().map_err(|e| config_err(e.to_string()))?;
        let n_max = *self.n_list.last().expect("non-empty");
        if picard.m_law < 4 * n_max {
            return Err(Error::ReferenceTooSmall {
                m_law: picard.m_law,
                n: n_max,
            });
        }
        let kernels_satisfied = kernel_checks.iter().all(|(_, r)| r.satisfied) && !kernel_checks.is_empty();
        Ok(Experiment {
            config: self.clone(),
            grid,
            dynamics,
            picard,
            delta,
            admissibility: Admissibility {
                setting: self.setting,
                delta,
                epsilon,
                gamma,
                p_lower_bound,
                p: self.p,
                kernel_checks,
                kernels_satisfied,
                notes,
            },
            config_hash: fnv1a(serde_json::to_string(self).expect("config serializes").as_bytes()),
        })
    }
}
