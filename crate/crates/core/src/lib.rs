//! Mean-field stochastic Volterra equations: kernels and their discrete
//! weights, an explicit path simulator, Picard iteration on law flows,
//! interacting particle systems, propagation-of-chaos experiments and the
//! Yamada–Watanabe approximation functions.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assignment;
pub mod coefficients;
pub mod engine;
pub mod error;
pub mod grid;
pub mod harness;
pub mod interp;
pub mod kernels;
pub mod mckean;
pub mod measures;
pub mod noise;
pub mod quadrature;
pub mod yamada_watanabe;

pub use coefficients::{DiffusionSpec, DriftSpec, LinearMeanField};
pub use engine::{simulate_frozen_law, Dynamics, PathEnsemble};
pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use harness::{run_chaos_experiment, ChaosReport, ExperimentConfig};
pub use kernels::{DiffusionWeightMode, KernelFamily, KernelSpec};
pub use mckean::{picard_solve, simulate_particle_system, synchronous_coupling, PicardConfig, PicardResult};
pub use measures::{EmpiricalMeasure, Estimator, LawFlow};
pub use noise::{InitSampler, NoisePlan};
pub use yamada_watanabe::{phi_n, YWSequence};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/mean_field.md")]
    mod mean_field {}
    #[doc = include_str!("../../../book/src/wasserstein.md")]
    mod wasserstein {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/yamada_watanabe.md")]
    mod yamada_watanabe {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
