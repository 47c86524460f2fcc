use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use volterra_chaos::engine::martingale_check;
use volterra_chaos::harness::config::ExperimentConfig;
use volterra_chaos::harness::diagnostics::moment_diagnostic;
use volterra_chaos::harness::experiment::run_experiment;
use volterra_chaos::harness::gc::glivenko_cantelli_benchmark;
use volterra_chaos::harness::rates::{delta_from_epsilon, epsilon_n, RateRegime};
use volterra_chaos::mckean::{picard_solve, simulate_particle_system};
use volterra_chaos::noise::{InitSampler, NoisePlan};
use volterra_chaos::yamada_watanabe::YWSequence;
use volterra_chaos::{Error, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const THREADS_ENV: &str = "VC_THREADS";
const DEFAULT_OUT: &str = "vchaos-out";

/// Mean-field stochastic Volterra experiments.
#[derive(Debug, Parser)]
#[command(name = "vchaos", version, about)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; `VC_THREADS` takes precedence.
    #[arg(long, global = true, value_name = "INT")]
    threads: Option<usize>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the interacting particle system.
    Simulate {
        /// Number of particles; defaults to the largest entry of `n_list`.
        #[arg(long)]
        particles: Option<usize>,
    },
    /// Solve for the mean-field law by Picard iteration.
    Picard,
    /// Run the propagation-of-chaos rate experiment.
    Chaos,
    /// Empirical-measure convergence benchmark for i.i.d. samples.
    GcBench {
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        delta: f64,
        #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512")]
        n_list: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Sampler::Gaussian)]
        sampler: Sampler,
        #[arg(long, default_value_t = 32)]
        reps: usize,
    },
    /// Check the configured kernels and coefficients against the claimed setting.
    VerifyKernel,
    /// Tabulate the reference rate epsilon_N.
    Rates {
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Wasserstein order; conflicts with `--epsilon`.
        #[arg(long, conflicts_with = "epsilon")]
        delta: Option<f64>,
        /// Integrability exponent; sets `delta = (4 + 2 eps) / eps`.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024")]
        n_list: Vec<usize>,
    },
    /// Dump `x, phi_n, phi_n', phi_n''` for a Yamada–Watanabe function.
    YwDump {
        #[arg(long, default_value_t = 0.0)]
        xi: f64,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 1001)]
        points: usize,
        /// Half-width of the evaluation window.
        #[arg(long, default_value_t = 2.0)]
        x_max: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sampler {
    Gaussian,
    Uniform,
    TwoPoint,
    Dirac,
}

impl Sampler {
    fn build(self, d: usize) -> InitSampler {
        match self {
            Sampler::Gaussian => InitSampler::standard_gaussian(d),
            Sampler::Uniform => InitSampler::Uniform {
                lo: vec![0.0; d],
                hi: vec![1.0; d],
            },
            Sampler::TwoPoint => InitSampler::TwoPoint {
                lo: vec![-1.0; d],
                hi: vec![1.0; d],
            },
            Sampler::Dirac => InitSampler::Dirac { x0: vec![0.0; d] },
        }
    }
}

struct RunLog {
    start: Instant,
    file: BufWriter<File>,
}

impl RunLog {
    fn open(dir: &Path) -> Result<Self> {
        Ok(Self {
            start: Instant::now(),
            file: BufWriter::new(File::create(dir.join("run.log"))?),
        })
    }

    fn line(&mut self, msg: &str) -> Result<()> {
        writeln!(self.file, "[{:>9.2}s] {msg}", self.start.elapsed().as_secs_f64())?;
        self.file.flush()?;
        Ok(())
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| config_err(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => flag,
    };
    match n {
        Some(0) => Err(config_err("thread count must be positive")),
        other => Ok(other),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| config_err("this subcommand needs --config PATH"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { particles } => {
            let cfg = load_config(cli)?;
            let exp = cfg.build()?;
            let dir = out_dir(cli, Some(&cfg))?;
            let mut log = RunLog::open(&dir)?;
            let n = particles.unwrap_or(*cfg.n_list.last().expect("validated"));
            log.line(&format!("simulating {n} particles, seed {}", cfg.master_seed))?;
            let noise = NoisePlan::new(cfg.master_seed).child("simulate", 0);
            let ens = simulate_particle_system(n, &exp.grid, &exp.dynamics, &cfg.init, &noise)?;
            ens.write_csv(BufWriter::new(File::create(dir.join("paths.csv"))?))?;
            let moments = moment_diagnostic(&ens, &[1.0, 2.0, 4.0]);
            if moments.blow_up_warning {
                log.line("warning: node moments grow more than tenfold over their median")?;
            }
            write_json(
                &dir.join("report.json"),
                &json!({
                    "command": "simulate",
                    "particles": n,
                    "master_seed": cfg.master_seed,
                    "checksum": format!("{:016x}", ens.checksum()),
                    "moments": moments,
                    "martingale": martingale_check(&ens).ok(),
                }),
            )?;
            log.line("done")?;
        }
        Command::Picard => {
            let cfg = load_config(cli)?;
            let exp = cfg.build()?;
            let dir = out_dir(cli, Some(&cfg))?;
            let mut log = RunLog::open(&dir)?;
            log.line(&format!(
                "picard with {} particles, tol {:e}",
                exp.picard.m_law, exp.picard.tol
            ))?;
            let result = match picard_solve(&exp.grid, &exp.dynamics, &cfg.init, &exp.picard, cfg.master_seed) {
                Ok(r) => r,
                Err(e) => {
                    log.line(&format!("failed: {e}"))?;
                    return Err(e);
                }
            };
            log.line(&format!(
                "{} iterations, gaps {:?}",
                result.iterations_used, result.gap_history
            ))?;
            result.write_json(&dir.join("report.json"))?;
            result.write_csv(BufWriter::new(File::create(dir.join("law.csv"))?))?;
        }
        Command::Chaos => {
            let cfg = load_config(cli)?;
            let exp = cfg.build()?;
            let dir = out_dir(cli, Some(&cfg))?;
            let report = run_experiment(&exp, Some(&dir))?;
            for row in &report.rows {
                println!(
                    "N = {:>6}  pathwise {:.4e}  wasserstein {:.4e}  debiased {:.4e}",
                    row.n, row.sup_pathwise, row.sup_wasserstein, row.sup_debiased
                );
            }
        }
        Command::GcBench {
            dim,
            delta,
            n_list,
            sampler,
            reps,
        } => {
            let dir = out_dir(cli, None)?;
            let mut log = RunLog::open(&dir)?;
            let seed = cli.seed.unwrap_or(0);
            log.line(&format!(
                "d = {dim}, delta = {delta}, sampler {sampler:?}, {reps} replications"
            ))?;
            let table =
                glivenko_cantelli_benchmark(*dim, *delta, n_list, &sampler.build(*dim), *reps, seed).map_err(|e| {
                    match e {
                        Error::DimensionMismatch { .. } | Error::InvalidParameter(_) => config_err(e.to_string()),
                        other => other,
                    }
                })?;
            table.write_csv(File::create(dir.join("gc.csv"))?)?;
            write_json(&dir.join("report.json"), &table)?;
            log.line(&format!(
                "slope {:?}, target {}",
                table.fit.map(|f| f.slope),
                table.target_slope
            ))?;
        }
        Command::VerifyKernel => {
            let cfg = load_config(cli)?;
            let exp = cfg.build()?;
            let dir = out_dir(cli, Some(&cfg))?;
            write_json(&dir.join("report.json"), &exp.admissibility)?;
            println!(
                "kernels satisfied: {}, delta = {}",
                exp.admissibility.kernels_satisfied, exp.delta
            );
            for note in &exp.admissibility.notes {
                println!("note: {note}");
            }
        }
        Command::Rates {
            dim,
            delta,
            epsilon,
            n_list,
        } => {
            let delta = match (delta, epsilon) {
                (Some(d), _) => *d,
                (None, Some(e)) => delta_from_epsilon(*e)?,
                (None, None) => 2.0,
            };
            if *dim == 0 || delta.is_nan() || delta < 1.0 || n_list.contains(&0) {
                return Err(config_err("need dim >= 1, delta >= 1 and positive N"));
            }
            let dir = out_dir(cli, None)?;
            let regime = RateRegime::select(*dim, delta);
            let mut w = csv::Writer::from_writer(File::create(dir.join("epsilon_n.csv"))?);
            w.write_record(["N", "epsilon_N", "regime"])?;
            for &n in n_list {
                let e = epsilon_n(*dim, delta, n);
                w.write_record([n.to_string(), e.to_string(), format!("{regime:?}")])?;
                println!("{n}\t{e}");
            }
            w.flush()?;
            write_json(
                &dir.join("report.json"),
                &json!({"d": dim, "delta": delta, "regime": regime, "exponent": regime.exponent(*dim, delta)}),
            )?;
        }
        Command::YwDump { xi, n, points, x_max } => {
            if *n == 0 || *points < 2 || x_max.is_nan() || *x_max <= 0.0 {
                return Err(config_err("need n >= 1, points >= 2 and x_max > 0"));
            }
            let seq = YWSequence::new(*xi, *n)?;
            let xs: Vec<f64> = (0..*points)
                .map(|i| -x_max + 2.0 * x_max * i as f64 / (*points - 1) as f64)
                .collect();
            let dir = out_dir(cli, None)?;
            let mut w = csv::Writer::from_writer(File::create(dir.join("yw.csv"))?);
            w.write_record(["x", "phi", "phi_prime", "phi_second"])?;
            for row in seq.table(*n, &xs) {
                w.write_record(row.iter().map(|v| v.to_string()))?;
            }
            w.flush()?;
            write_json(
                &dir.join("report.json"),
                &json!({"xi": xi, "n": n, "a": seq.a(), "mollifier": seq.mollifier(*n), "offset": seq.offset(*n)}),
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_NUMERICAL)
            }
        }
    }
}
