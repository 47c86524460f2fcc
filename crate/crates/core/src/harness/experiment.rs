//! Propagation-of-chaos rate experiment.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::{Admissibility, Experiment, ExperimentConfig, Setting};
use crate::harness::rates::{epsilon_n, RateFit, RateRegime, SLOPE_BAND};
use crate::mckean::{picard_solve, synchronous_coupling_with, CouplingResult, DebiasMethod};

/// Sup-over-nodes errors for one particle count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosRow {
    pub n: usize,
    pub epsilon_n: f64,
    pub sup_pathwise: f64,
    pub sup_wasserstein: f64,
    pub sup_companion: f64,
    pub sup_debiased: f64,
    pub estimator: String,
    pub debias: DebiasMethod,
}

/// Fitted slope of one metric against `N`, with its target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitOutcome {
    pub fit: Option<RateFit>,
    pub target: f64,
    pub within_band: Option<bool>,
    /// Set when the slope is undefined (some error is exactly zero).
    pub note: Option<String>,
}

impl FitOutcome {
    fn compute(ns: &[f64], values: &[f64], target: f64) -> Self {
        if values.iter().all(|&v| v == 0.0) {
            return Self {
                fit: None,
                target,
                within_band: None,
                note: Some("slope undefined: metric is identically zero".into()),
            };
        }
        match RateFit::fit(ns, values) {
            Some(fit) => Self {
                fit: Some(fit),
                target,
                within_band: Some(fit.within(target, SLOPE_BAND)),
                note: None,
            },
            None => Self {
                fit: None,
                target,
                within_band: None,
                note: Some("slope undefined: some errors are zero or too few points".into()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fits {
    pub pathwise: FitOutcome,
    pub wasserstein: FitOutcome,
    pub debiased: FitOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSummary {
    pub m_law: usize,
    pub iterations_used: usize,
    pub gap_history: Vec<f64>,
    pub converged: bool,
    /// Largest companion value: the bias scale of a finite reference.
    pub bias_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub crate_version: String,
    pub master_seed: u64,
    pub threads: usize,
    pub config_hash: String,
    pub started_unix: u64,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosReport {
    pub schema: String,
    pub setting: Setting,
    pub dim: usize,
    pub delta: f64,
    pub regime: RateRegime,
    pub horizon: f64,
    pub n_steps: usize,
    pub replications: usize,
    pub rows: Vec<ChaosRow>,
    pub fits: Option<Fits>,
    pub reference: Option<ReferenceSummary>,
    pub admissibility: Admissibility,
    pub provenance: Provenance,
    /// Set when the run stopped early; rows hold the completed particle counts.
    pub failure: Option<String>,
}

struct Outputs {
    dir: PathBuf,
    errors: csv::Writer<File>,
    rates: csv::Writer<File>,
    log: BufWriter<File>,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut errors = csv::Writer::from_path(dir.join("errors.csv"))?;
        errors.write_record(["N", "t", "metric", "value", "estimator"])?;
        let mut rates = csv::Writer::from_path(dir.join("rates.csv"))?;
        rates.write_record(["N", "epsilon_N", "metric", "debiased"])?;
        errors.flush()?;
        rates.flush()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            errors,
            rates,
            log: BufWriter::new(File::create(dir.join("run.log"))?),
        })
    }

    fn log(&mut self, start: &Instant, line: &str) -> Result<()> {
        writeln!(self.log, "[{:>9.2}s] {line}", start.elapsed().as_secs_f64())?;
        self.log.flush()?;
        Ok(())
    }

    fn append(&mut self, row: &ChaosRow, coupling: &CouplingResult) -> Result<()> {
        let columns: [(&str, &[f64]); 4] = [
            ("pathwise", &coupling.pathwise),
            ("wasserstein", &coupling.wasserstein),
            ("companion", &coupling.companion),
            ("debiased", &coupling.debiased),
        ];
        for (metric, values) in columns {
            let estimator = if metric == "pathwise" {
                "pathwise"
            } else {
                &row.estimator
            };
            for (t, v) in coupling.t.iter().zip(values) {
                self.errors.write_record([
                    row.n.to_string(),
                    t.to_string(),
                    metric.to_string(),
                    v.to_string(),
                    estimator.to_string(),
                ])?;
            }
        }
        self.rates.write_record([
            row.n.to_string(),
            row.epsilon_n.to_string(),
            row.sup_wasserstein.to_string(),
            row.sup_debiased.to_string(),
        ])?;
        self.errors.flush()?;
        self.rates.flush()?;
        Ok(())
    }

    fn write_report(&self, report: &ChaosReport) -> Result<()> {
        let file = File::create(self.dir.join("report.json"))?;
        serde_json::to_writer_pretty(BufWriter::new(file), report)?;
        Ok(())
    }
}

/// Runs the experiment, writing outputs into `cfg.output_dir` when set.
pub fn run_chaos_experiment(cfg: &ExperimentConfig) -> Result<ChaosReport> {
    let exp = cfg.build()?;
    run_experiment(&exp, cfg.output_dir.as_deref())
}

/// Runs a built experiment, optionally writing outputs into `out`.
/// Every completed particle count is flushed before the next one starts.
pub fn run_experiment(exp: &Experiment, out: Option<&Path>) -> Result<ChaosReport> {
    let start = Instant::now();
    let cfg = &exp.config;
    let d = cfg.dim();
    let mut outputs = out.map(Outputs::open).transpose()?;
    let mut report = ChaosReport {
        schema: cfg.schema.clone(),
        setting: cfg.setting,
        dim: d,
        delta: exp.delta,
        regime: RateRegime::select(d, exp.delta),
        horizon: exp.grid.horizon(),
        n_steps: exp.grid.n_steps(),
        replications: cfg.replications,
        rows: Vec::new(),
        fits: None,
        reference: None,
        admissibility: exp.admissibility.clone(),
        provenance: Provenance {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: cfg.master_seed,
            threads: rayon::current_num_threads(),
            config_hash: format!("{:016x}", exp.config_hash),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            runtime_secs: 0.0,
        },
        failure: None,
    };
    let log = |outputs: &mut Option<Outputs>, line: String| -> Result<()> {
        match outputs {
            Some(o) => o.log(&start, &line),
            None => Ok(()),
        }
    };
    log(
        &mut outputs,
        format!(
            "setting {:?}, d = {d}, delta = {}, {} replications, seed {}",
            cfg.setting, exp.delta, cfg.replications, cfg.master_seed
        ),
    )?;
    for note in &exp.admissibility.notes {
        log(&mut outputs, format!("admissibility: {note}"))?;
    }

    let fail = |report: &mut ChaosReport, outputs: &Option<Outputs>, err: Error| -> Error {
        report.failure = Some(err.to_string());
        report.provenance.runtime_secs = start.elapsed().as_secs_f64();
        if let Some(o) = outputs {
            let _ = o.write_report(report);
        }
        err
    };

    let picard = match picard_solve(&exp.grid, &exp.dynamics, &cfg.init, &exp.picard, cfg.master_seed) {
        Ok(p) => p,
        Err(e) => {
            let _ = log(&mut outputs, format!("reference law failed: {e}"));
            return Err(fail(&mut report, &outputs, e));
        }
    };
    log(
        &mut outputs,
        format!(
            "reference law: {} iterations, gaps {:?}",
            picard.iterations_used, picard.gap_history
        ),
    )?;
    report.reference = Some(ReferenceSummary {
        m_law: exp.picard.m_law,
        iterations_used: picard.iterations_used,
        gap_history: picard.gap_history.clone(),
        converged: picard.converged,
        bias_scale: 0.0,
    });

    for &n in &cfg.n_list {
        let coupling = match synchronous_coupling_with(
            n,
            &exp.grid,
            &exp.dynamics,
            &cfg.init,
            &picard.law,
            cfg.replications,
            cfg.master_seed,
            exp.delta,
            cfg.estimator.forced(),
        ) {
            Ok(c) => c,
            Err(e) => {
                let _ = log(&mut outputs, format!("N = {n} failed: {e}"));
                return Err(fail(&mut report, &outputs, e));
            }
        };
        let row = ChaosRow {
            n,
            epsilon_n: epsilon_n(d, exp.delta, n),
            sup_pathwise: coupling.sup_pathwise(),
            sup_wasserstein: coupling.sup_wasserstein(),
            sup_companion: coupling.sup_companion(),
            sup_debiased: coupling.sup_debiased(),
            estimator: coupling.estimator.clone(),
            debias: coupling.debias,
        };
        if let Some(r) = report.reference.as_mut() {
            r.bias_scale = r.bias_scale.max(row.sup_companion);
        }
        log(
            &mut outputs,
            format!(
                "N = {n}: pathwise {:.6e}, wasserstein {:.6e}, debiased {:.6e} ({})",
                row.sup_pathwise, row.sup_wasserstein, row.sup_debiased, row.estimator
            ),
        )?;
        if let Some(o) = outputs.as_mut() {
            o.append(&row, &coupling)?;
        }
        report.rows.push(row);
        report.provenance.runtime_secs = start.elapsed().as_secs_f64();
        if let Some(o) = &outputs {
            o.write_report(&report)?;
        }
    }

    let ns: Vec<f64> = report.rows.iter().map(|r| r.n as f64).collect();
    let target = report.regime.exponent(d, exp.delta);
    let pick = |f: fn(&ChaosRow) -> f64| -> Vec<f64> { report.rows.iter().map(f).collect() };
    report.fits = Some(Fits {
        pathwise: FitOutcome::compute(&ns, &pick(|r| r.sup_pathwise), -0.5),
        wasserstein: FitOutcome::compute(&ns, &pick(|r| r.sup_wasserstein), target),
        debiased: FitOutcome::compute(&ns, &pick(|r| r.sup_debiased), target),
    });
    report.provenance.runtime_secs = start.elapsed().as_secs_f64();
    if let Some(fits) = &report.fits {
        log(
            &mut outputs,
            format!(
                "slopes: pathwise {:?}, wasserstein {:?}, debiased {:?}",
                fits.pathwise.fit.map(|f| f.slope),
                fits.wasserstein.fit.map(|f| f.slope),
                fits.debiased.fit.map(|f| f.slope)
            ),
        )?;
    }
    if let Some(o) = &outputs {
        o.write_report(&report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(b: f64) -> ExperimentConfig {
        let text = format!(
            r#"{{
            "schema": "volterra-chaos/v1",
            "setting": "holder_one_d",
            "grid": {{"horizon": 1.0, "n_steps": 16}},
            "kernels": {{
                "drift": {{"family": "exp_convolution", "c": 1.0, "lambda": 1.0}},
                "diffusion": {{"family": "exp_convolution", "c": 1.0, "lambda": 1.0}}
            }},
            "drift": {{"family": "linear_mean_field", "a": -1.0, "b": {b}, "c": 0.0}},
            "diffusion": {{"family": "holder_power", "c": 0.5, "eta": 0.5}},
            "init": {{"family": "dirac", "x0": [1.0]}},
            "n_list": [4, 8, 16, 32],
            "replications": 3,
            "picard": {{"m_law": 256, "tol": 1e-9, "max_iters": 30}},
            "master_seed": 3
        }}"#
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    #[test]
    fn measure_free_run_flags_undefined_slope() {
        let report = run_chaos_experiment(&config(0.0)).unwrap();
        assert!(report.rows.iter().all(|r| r.sup_pathwise == 0.0));
        let fits = report.fits.unwrap();
        assert!(fits.pathwise.fit.is_none());
        assert!(fits.pathwise.note.is_some());
        assert!(fits.wasserstein.fit.is_some());
    }

    #[test]
    fn writes_outputs_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(0.5);
        cfg.output_dir = Some(dir.path().join("a"));
        let first = run_chaos_experiment(&cfg).unwrap();
        cfg.output_dir = Some(dir.path().join("b"));
        let second = run_chaos_experiment(&cfg).unwrap();
        assert_eq!(first.rows, second.rows);
        for name in ["errors.csv", "rates.csv"] {
            let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
            let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
        let rates = std::fs::read_to_string(dir.path().join("a/rates.csv")).unwrap();
        assert_eq!(rates.lines().next().unwrap(), "N,epsilon_N,metric,debiased");
        assert_eq!(rates.lines().count(), 5);
        let errors = std::fs::read_to_string(dir.path().join("a/errors.csv")).unwrap();
        assert_eq!(errors.lines().next().unwrap(), "N,t,metric,value,estimator");
        assert_eq!(errors.lines().count(), 1 + 4 * 4 * 17);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/report.json")).unwrap()).unwrap();
        assert_eq!(json["rows"].as_array().unwrap().len(), 4);
        assert!(dir.path().join("a/run.log").exists());
    }
}
