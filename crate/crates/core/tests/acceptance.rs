//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion does.

mod common;

use std::io::Write;
use std::time::Instant;

use common::{brute_force_pow, cloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volterra_chaos::coefficients::{DiffusionSpec, DriftSpec};
use volterra_chaos::engine::{simulate_frozen_law, Dynamics};
use volterra_chaos::grid::TimeGrid;
use volterra_chaos::harness::config::ExperimentConfig;
use volterra_chaos::harness::diagnostics::holder_regularity_diagnostic;
use volterra_chaos::harness::experiment::{run_experiment, ChaosReport, FitOutcome};
use volterra_chaos::harness::gc::glivenko_cantelli_benchmark;
use volterra_chaos::kernels::KernelSpec;
use volterra_chaos::mckean::{exchangeability_check, picard_solve, PicardConfig};
use volterra_chaos::measures::{
    wasserstein_1d_pow, wasserstein_exact, wasserstein_exact_pow, EmpiricalMeasure, LawFlow,
};
use volterra_chaos::noise::{InitSampler, NoisePlan};
use volterra_chaos::quadrature::integrate_tol;
use volterra_chaos::yamada_watanabe::{compute_a_sequence, YWSequence};

const SLOPE_TARGET: f64 = -0.5;
const SLOPE_BAND: f64 = 0.15;
const N_LIST: &str = "[64, 128, 256, 512, 1024]";

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn setting_one_config() -> String {
    format!(
        r#"{{
            "schema": "volterra-chaos/v1",
            "setting": "lipschitz_multi_d",
            "grid": {{"horizon": 1.0, "n_steps": 256}},
            "kernels": {{
                "drift": {{"family": "fractional", "alpha": 0.25}},
                "diffusion": {{"family": "fractional", "alpha": 0.25}},
                "diffusion_weights": "variance_matched"
            }},
            "drift": {{"family": "linear_mean_field", "a": -1.0, "b": 0.5, "c": 0.0}},
            "diffusion": {{"family": "affine_mean", "s0": 0.2, "s1": 0.1, "s2": 0.1}},
            "init": {{"family": "gaussian", "mean": [0.0], "sd": [1.0]}},
            "n_list": {N_LIST},
            "replications": 32,
            "picard": {{"m_law": 8192, "tol": 1e-6, "max_iters": 40}},
            "epsilon": 2.0,
            "master_seed": 2024
        }}"#
    )
}

fn setting_two_config() -> String {
    format!(
        r#"{{
            "schema": "volterra-chaos/v1",
            "setting": "holder_one_d",
            "grid": {{"horizon": 1.0, "n_steps": 256}},
            "kernels": {{
                "drift": {{"family": "exp_convolution", "c": 1.0, "lambda": 1.0}},
                "diffusion": {{"family": "exp_convolution", "c": 1.0, "lambda": 1.0}},
                "fast_path": true
            }},
            "drift": {{"family": "linear_mean_field", "a": -1.0, "b": 0.5, "c": 0.0}},
            "diffusion": {{"family": "holder_power", "c": 0.5, "eta": 0.5}},
            "init": {{"family": "dirac", "x0": [1.0]}},
            "n_list": {N_LIST},
            "replications": 32,
            "picard": {{"m_law": 8192, "tol": 1e-6, "max_iters": 40}},
            "master_seed": 2024
        }}"#
    )
}

fn run_config(text: &str, out: Option<&std::path::Path>) -> ChaosReport {
    let exp = ExperimentConfig::from_json(text).unwrap().build().unwrap();
    run_experiment(&exp, out).unwrap()
}

fn slope(outcome: &FitOutcome) -> f64 {
    outcome.fit.map_or(f64::NAN, |f| f.slope)
}

fn in_band(s: f64, target: f64) -> bool {
    (s - target).abs() <= SLOPE_BAND
}

fn criterion_1(report: &ChaosReport) -> Verdict {
    let fits = report.fits.as_ref().unwrap();
    let s = slope(&fits.debiased);
    verdict(
        in_band(s, SLOPE_TARGET),
        format!(
            "Setting I rate: debiased E[W_4^4] slope {s:.3} (raw {:.3}, pathwise {:.3}), target {SLOPE_TARGET} +/- {SLOPE_BAND}",
            slope(&fits.wasserstein),
            slope(&fits.pathwise)
        ),
    )
}

fn criterion_2(report: &ChaosReport) -> Verdict {
    let fits = report.fits.as_ref().unwrap();
    let (p, w) = (slope(&fits.pathwise), slope(&fits.wasserstein));
    verdict(
        in_band(p, SLOPE_TARGET) && in_band(w, SLOPE_TARGET),
        format!(
            "Setting II rate: pathwise slope {p:.3}, W_1 slope {w:.3} (debiased {:.3}), target {SLOPE_TARGET} +/- {SLOPE_BAND}",
            slope(&fits.debiased)
        ),
    )
}

fn criterion_3() -> Verdict {
    let ns = [32, 64, 128, 256, 512];
    let cases = [
        (
            "d=1 delta=2 two-point",
            1,
            2.0,
            InitSampler::TwoPoint {
                lo: vec![0.0],
                hi: vec![1.0],
            },
        ),
        ("d=4 delta=2 gaussian", 4, 2.0, InitSampler::standard_gaussian(4)),
        ("d=5 delta=1 gaussian", 5, 1.0, InitSampler::standard_gaussian(5)),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, d, delta, sampler) in cases {
        let table = glivenko_cantelli_benchmark(d, delta, &ns, &sampler, 32, 7).unwrap();
        let s = table.fit.map_or(f64::NAN, |f| f.slope);
        let ok = in_band(s, table.target_slope);
        pass &= ok;
        parts.push(format!(
            "{label}: slope {s:.3} vs {:.2}{}{}",
            table.target_slope,
            if table.fit_on_log_divided { " (log-divided)" } else { "" },
            if ok { "" } else { " OUT" }
        ));
    }
    verdict(pass, format!("Glivenko-Cantelli regimes: {}", parts.join("; ")))
}

fn constant_kernel_dynamics(horizon: f64, drift: DriftSpec, diffusion: DiffusionSpec) -> Dynamics {
    let k = KernelSpec::constant(1.0, horizon).unwrap();
    Dynamics::new(k.clone(), k, drift, diffusion).unwrap()
}

fn dummy_law(grid: &TimeGrid) -> LawFlow {
    LawFlow::constant(*grid, EmpiricalMeasure::from_scalars(&[0.0]).unwrap())
}

/// Sample variance of terminal states and the standard error of that estimate.
fn terminal_variance(dy: &Dynamics, n_steps: usize, m: usize, seed: u64) -> (f64, f64) {
    let grid = TimeGrid::new(1.0, n_steps).unwrap();
    let ens = simulate_frozen_law(
        &grid,
        dy,
        &dummy_law(&grid),
        &InitSampler::dirac_scalar(0.0),
        &NoisePlan::new(seed),
        m,
    )
    .unwrap();
    let xs = ens.marginal(n_steps).scalars();
    let mf = m as f64;
    let mean = xs.iter().sum::<f64>() / mf;
    let c2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / mf;
    let c4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / mf;
    (c2 * mf / (mf - 1.0), ((c4 - c2 * c2) / mf).sqrt())
}

fn criterion_4() -> Verdict {
    let brownian = constant_kernel_dynamics(1.0, DriftSpec::Zero, DiffusionSpec::ConstantVol { s: 1.0 });
    let (bv, bse) = terminal_variance(&brownian, 64, 100_000, 41);
    let b_ok = (bv - 1.0).abs() <= 4.0 * bse;

    let frac = KernelSpec::fractional(0.25, 1.0).unwrap();
    let frac_dy = Dynamics::new(
        frac.clone(),
        frac,
        DriftSpec::Zero,
        DiffusionSpec::ConstantVol { s: 1.0 },
    )
    .unwrap();
    // independent oracle for \int_0^1 s^{-1/2} ds
    let exact = integrate_tol(|s: f64| s.powf(-0.5), 0.0, 1.0, 1e-12, 0.0).unwrap();
    let (fv, fse) = terminal_variance(&frac_dy, 512, 20_000, 43);
    let f_ok = (fv - exact).abs() <= 4.0 * fse;

    let grid = TimeGrid::new(1.0, 512).unwrap();
    let ode_error = |dy: &Dynamics, solution: &dyn Fn(f64) -> f64| -> f64 {
        let ens = simulate_frozen_law(
            &grid,
            dy,
            &dummy_law(&grid),
            &InitSampler::dirac_scalar(1.0),
            &NoisePlan::new(0),
            1,
        )
        .unwrap();
        (0..grid.n_nodes())
            .map(|k| (ens.states()[[0, k, 0]] - solution(grid.t(k))).abs())
            .fold(0.0, f64::max)
    };
    let linear = constant_kernel_dynamics(
        1.0,
        DriftSpec::linear(-1.0, 0.0, 0.0),
        DiffusionSpec::ConstantVol { s: 0.0 },
    );
    let e1 = ode_error(&linear, &|t| (-t).exp());
    let k = KernelSpec::exp_convolution(1.0, 1.0, 1.0).unwrap();
    let memory = Dynamics::new(
        k.clone(),
        k,
        DriftSpec::linear(-1.0, 0.0, 0.0),
        DiffusionSpec::ConstantVol { s: 0.0 },
    )
    .unwrap();
    // x = 1 - \int_0^t e^{-(t-s)} x_s ds solves to (1 + e^{-2t}) / 2
    let e2 = ode_error(&memory, &|t| 0.5 * (1.0 + (-2.0 * t).exp()));
    let o_ok = e1 < 5e-3 && e2 < 5e-3;
    verdict(
        b_ok && f_ok && o_ok,
        format!(
            "scheme anchors: Brownian var {bv:.4} (se {bse:.4}), fractional var {fv:.4} vs {exact:.6} (se {fse:.4}), ODE max errors {e1:.2e} and {e2:.2e}"
        ),
    )
}

fn criterion_5(setting_one: &ChaosReport) -> Verdict {
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let frac = KernelSpec::fractional(0.25, 1.0).unwrap();
    let free = Dynamics::new(
        frac.clone(),
        frac,
        DriftSpec::linear(-1.0, 0.0, 0.3),
        DiffusionSpec::Affine { s0: 0.5, s1: 0.1 },
    )
    .unwrap();
    let cfg = PicardConfig {
        m_law: 2048,
        tol: 1e-12,
        max_iters: 10,
        delta: 4.0,
        common_random_numbers: true,
    };
    let res = picard_solve(&grid, &free, &InitSampler::standard_gaussian(1), &cfg, 5).unwrap();
    // the first application of the solution map lands on the fixed point;
    // the gap to the next one is exactly zero
    let exact_one = res.gap_history.get(1) == Some(&0.0) && res.converged;

    let grid = TimeGrid::new(1.0, 512).unwrap();
    let ode = constant_kernel_dynamics(
        1.0,
        DriftSpec::linear(0.0, -1.0, 0.0),
        DiffusionSpec::ConstantVol { s: 0.0 },
    );
    let cfg = PicardConfig {
        m_law: 2,
        tol: 1e-10,
        max_iters: 40,
        delta: 1.0,
        common_random_numbers: true,
    };
    let law = picard_solve(&grid, &ode, &InitSampler::dirac_scalar(1.0), &cfg, 1)
        .unwrap()
        .law;
    let ode_err = (0..grid.n_nodes())
        .map(|k| (law.at(k).mean()[0] - (-grid.t(k)).exp()).abs())
        .fold(0.0, f64::max);

    let gaps = &setting_one.reference.as_ref().unwrap().gap_history;
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    verdict(
        exact_one && ode_err < 5e-3 && decreasing,
        format!(
            "Picard: measure-free gaps {:?}; mean-field ODE max error {ode_err:.2e}; Setting I gaps {}",
            res.gap_history,
            gaps.iter().map(|g| format!("{g:.2e}")).collect::<Vec<_>>().join(" > ")
        ),
    )
}

fn criterion_6() -> Verdict {
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let frac = KernelSpec::fractional(0.25, 1.0).unwrap();
    let dy = Dynamics::new(
        frac.clone(),
        frac,
        DriftSpec::linear(-1.0, 0.5, 0.0),
        DiffusionSpec::AffineMean {
            s0: 0.2,
            s1: 0.1,
            s2: 0.1,
        },
    )
    .unwrap();
    let init = InitSampler::standard_gaussian(1);
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut checked = 0;
    let mut failed = 0;
    for n in [2, 5, 16] {
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            checked += 1;
            if !exchangeability_check(n, &grid, &dy, &init, rng.random(), &perm).unwrap() {
                failed += 1;
            }
        }
    }
    verdict(
        failed == 0,
        format!("exchangeability: {checked} permutations at N in {{2, 5, 16}}, {failed} not bit-exact"),
    )
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst: f64 = 0.0;
    for d in [1, 2] {
        for n in 1..=8 {
            for p in [1.0, 2.0, 3.0] {
                let xs: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let ys: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let (mu, nu) = (cloud(xs.clone(), d), cloud(ys.clone(), d));
                let brute = brute_force_pow(p, mu.points(), nu.points());
                let exact = wasserstein_exact_pow(p, &mu, &nu).unwrap();
                worst = worst.max((exact - brute).abs());
                if d == 1 {
                    worst = worst.max((wasserstein_1d_pow(p, &xs, &ys).unwrap() - brute).abs());
                }
            }
        }
    }
    let mut violations = 0;
    for _ in 0..200 {
        let (n, d) = (rng.random_range(1..=8usize), rng.random_range(1..=3usize));
        let mut draw = || cloud((0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect(), d);
        let (a, b, c) = (draw(), draw(), draw());
        let p = rng.random_range(1.0..3.0);
        let q = p + rng.random_range(0.0..2.0);
        let (ab, bc, ac) = (
            wasserstein_exact(p, &a, &b).unwrap(),
            wasserstein_exact(p, &b, &c).unwrap(),
            wasserstein_exact(p, &a, &c).unwrap(),
        );
        if ac > ab + bc + 1e-9 || ab > wasserstein_exact(q, &a, &b).unwrap() * (1.0 + 1e-12) + 1e-12 {
            violations += 1;
        }
    }
    verdict(
        worst <= 1e-12 && violations == 0,
        format!("Wasserstein oracles: max deviation from brute force {worst:.1e}; {violations} of 200 triples violate triangle or order monotonicity"),
    )
}

fn criterion_8() -> Verdict {
    let mut worst_def: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    let mut bound_violations = 0;
    let mut sandwich_violations = 0;
    for xi in [0.0, 0.25, 0.5] {
        let a = compute_a_sequence(xi, 10).unwrap();
        let seq = YWSequence::new(xi, 10).unwrap();
        for n in 1..=10 {
            let def = integrate_tol(|s: f64| (-2.0 * xi * s).exp(), a[n].ln(), a[n - 1].ln(), 1e-14, 0.0).unwrap();
            worst_def = worst_def.max((def - n as f64).abs());
            let m = seq.mollifier(n);
            let mass = integrate_tol(
                |s: f64| m.eval(s.exp()) * s.exp(),
                a[n].ln(),
                a[n - 1].ln(),
                1e-12,
                1e-14,
            )
            .unwrap();
            worst_mass = worst_mass.max((mass - 1.0).abs());
            let ratio = (a[n - 1] / a[n]).ln();
            for i in 0..10_000 {
                let x = a[n] * (ratio * (i as f64 + 0.5) / 10_000.0).exp();
                let psi = seq.psi(n, x);
                if !(psi >= 0.0 && psi * x.powf(1.0 + 2.0 * xi) <= 2.0 / n as f64) {
                    bound_violations += 1;
                }
            }
            for i in 0..=6000 {
                let x = -3.0 + 6.0 * i as f64 / 6000.0;
                let phi = seq.phi(n, x);
                if phi > x.abs() || phi < x.abs() - a[n - 1] {
                    sandwich_violations += 1;
                }
            }
        }
    }
    verdict(
        worst_def <= 1e-10 && worst_mass <= 1e-8 && bound_violations == 0 && sandwich_violations == 0,
        format!(
            "Yamada-Watanabe: defining integrals within {worst_def:.1e}, masses within {worst_mass:.1e}, {bound_violations} bound and {sandwich_violations} sandwich violations"
        ),
    )
}

fn criterion_9() -> Verdict {
    let grid = TimeGrid::new(1.0, 256).unwrap();
    let lags = [1, 2, 4, 8, 16];
    let beta = |dy: &Dynamics, init: &InitSampler, m: usize| -> f64 {
        let ens = simulate_frozen_law(&grid, dy, &dummy_law(&grid), init, &NoisePlan::new(909), m).unwrap();
        holder_regularity_diagnostic(&ens, 2.0, &lags).unwrap().beta
    };
    let brownian = constant_kernel_dynamics(1.0, DriftSpec::Zero, DiffusionSpec::ConstantVol { s: 1.0 });
    let b = beta(&brownian, &InitSampler::dirac_scalar(0.0), 4000);
    let ode = constant_kernel_dynamics(
        1.0,
        DriftSpec::linear(-1.0, 0.0, 0.0),
        DiffusionSpec::ConstantVol { s: 0.0 },
    );
    let o = beta(&ode, &InitSampler::dirac_scalar(1.0), 1000);
    let frac = KernelSpec::fractional(0.25, 1.0).unwrap();
    let frac_dy = Dynamics::new(
        frac.clone(),
        frac,
        DriftSpec::Zero,
        DiffusionSpec::ConstantVol { s: 1.0 },
    )
    .unwrap();
    let f = beta(&frac_dy, &InitSampler::dirac_scalar(0.0), 4000);
    verdict(
        (b - 0.5).abs() <= 0.05 && (o - 1.0).abs() <= 0.05 && (f - 0.25).abs() <= 0.07,
        format!("path regularity: beta Brownian {b:.3} (0.5 +/- 0.05), ODE {o:.3} (1 +/- 0.05), fractional {f:.3} (0.25 +/- 0.07)"),
    )
}

fn criterion_10() -> Verdict {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let text = setting_two_config();
    for (threads, dir) in [1, 4, 8].into_iter().zip(&dirs) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_config(&text, Some(dir.path())));
    }
    let mut identical = true;
    for file in ["errors.csv", "rates.csv"] {
        let bodies: Vec<Vec<u8>> = dirs
            .iter()
            .map(|d| std::fs::read(d.path().join(file)).unwrap())
            .collect();
        identical &= bodies.windows(2).all(|w| w[0] == w[1]);
    }
    verdict(
        identical,
        "determinism: Setting II run at 1, 4 and 8 threads gives byte-identical errors.csv and rates.csv",
    )
}

#[test]
fn acceptance_criteria() {
    let mut stderr = std::io::stderr();
    let mut failed = Vec::new();
    let mut report = |id: usize, start: Instant, v: Verdict| {
        let status = if v.pass { "PASS" } else { "FAIL" };
        // written directly so the lines show even when output is captured
        writeln!(
            stderr,
            "criterion {id:>2}: {status}  {}  [{:.1}s]",
            v.detail,
            start.elapsed().as_secs_f64()
        )
        .unwrap();
        if !v.pass {
            failed.push(id);
        }
    };

    let t = Instant::now();
    let setting_one = run_config(&setting_one_config(), None);
    report(1, t, criterion_1(&setting_one));
    let t = Instant::now();
    let setting_two = run_config(&setting_two_config(), None);
    report(2, t, criterion_2(&setting_two));
    let t = Instant::now();
    report(3, t, criterion_3());
    let t = Instant::now();
    report(4, t, criterion_4());
    let t = Instant::now();
    report(5, t, criterion_5(&setting_one));
    let t = Instant::now();
    report(6, t, criterion_6());
    let t = Instant::now();
    report(7, t, criterion_7());
    let t = Instant::now();
    report(8, t, criterion_8());
    let t = Instant::now();
    report(9, t, criterion_9());
    let t = Instant::now();
    report(10, t, criterion_10());

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
