//! Experiment driver: reference rates, rate fits, the propagation-of-chaos
//! experiment, the empirical-measure benchmark and path diagnostics.

pub mod config;
pub mod diagnostics;
pub mod experiment;
pub mod gc;
pub mod rates;

pub use config::{Experiment, ExperimentConfig, Setting};
pub use diagnostics::{holder_regularity_diagnostic, moment_diagnostic, HolderEstimate, MomentTable};
pub use experiment::{run_chaos_experiment, run_experiment, ChaosReport};
pub use gc::{glivenko_cantelli_benchmark, GcTable};
pub use rates::{delta_from_epsilon, epsilon_n, RateFit, RateRegime};
