mod common;

use common::{brownian, mean_field};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use volterra_chaos::engine::{checksum_f64, simulate_frozen_law_inputs, PathInput};
use volterra_chaos::grid::TimeGrid;
use volterra_chaos::mckean::{
    apply_solution_map, exchangeability_check, picard_solve, replication_inputs, simulate_particle_system,
    simulate_particle_system_inputs, synchronous_coupling, PicardConfig,
};
use volterra_chaos::measures::{wasserstein_1d, Estimator, LawFlow};
use volterra_chaos::noise::{InitSampler, NoisePlan};
use volterra_chaos::EmpiricalMeasure;

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[test]
fn ensembles_are_bit_identical_across_thread_counts() {
    let grid = TimeGrid::new(1.0, 32).unwrap();
    let dy = mean_field(0.25, 1.0);
    let init = InitSampler::standard_gaussian(1);
    let run = |threads: usize| {
        pool(threads).install(|| {
            simulate_particle_system(257, &grid, &dy, &init, &NoisePlan::new(11))
                .unwrap()
                .checksum()
        })
    };
    let reference = run(1);
    assert_eq!(run(4), reference);
    assert_eq!(run(8), reference);
}

#[test]
fn coupling_csv_is_identical_across_thread_counts() {
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let dy = mean_field(0.25, 1.0);
    let init = InitSampler::standard_gaussian(1);
    let cfg = PicardConfig {
        m_law: 256,
        tol: 1e-8,
        max_iters: 30,
        delta: 4.0,
        common_random_numbers: true,
    };
    let run = |threads: usize| {
        pool(threads).install(|| {
            let law = picard_solve(&grid, &dy, &init, &cfg, 5).unwrap().law;
            let c = synchronous_coupling(16, &grid, &dy, &init, &law, 4, 5, 4.0).unwrap();
            let mut buf = Vec::new();
            c.write_csv(&mut buf).unwrap();
            buf
        })
    };
    let one = run(1);
    assert_eq!(run(4), one);
    assert_eq!(run(8), one);
}

#[test]
fn particles_and_limit_copies_share_their_noise() {
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let dy = mean_field(0.25, 1.0);
    let init = InitSampler::standard_gaussian(1);
    let law = LawFlow::constant(grid, EmpiricalMeasure::from_scalars(&vec![0.0; 64]).unwrap());
    let c = synchronous_coupling(8, &grid, &dy, &init, &law, 3, 9, 2.0).unwrap();
    for r in 0..3 {
        let inputs = replication_inputs(9, r, 8, &grid, &init);
        let folded = inputs.iter().fold(0u64, |h, p| {
            h.rotate_left(5) ^ p.increments_checksum() ^ checksum_f64(&p.x0)
        });
        assert_eq!(folded, c.input_checksums[r]);
        let plan = NoisePlan::new(9).child("replication", r as u64);
        let direct = simulate_particle_system(8, &grid, &dy, &init, &plan).unwrap();
        let via_inputs = simulate_particle_system_inputs(&grid, &dy, &inputs).unwrap();
        assert_eq!(direct.checksum(), via_inputs.checksum());
        let limit = simulate_frozen_law_inputs(&grid, &dy, &law, &inputs).unwrap();
        assert_eq!(
            limit.diffusion_increments().shape(),
            via_inputs.diffusion_increments().shape()
        );
    }
}

/// Terminal states on nested grids driven by one fine Brownian path.
fn terminal_on_level(dy: &volterra_chaos::Dynamics, fine: &[PathInput], fine_steps: usize, steps: usize) -> Vec<f64> {
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let ratio = fine_steps / steps;
    let inputs: Vec<PathInput> = fine
        .iter()
        .map(|p| PathInput {
            x0: p.x0.clone(),
            increments: p.increments.chunks(ratio).map(|c| c.iter().sum()).collect(),
        })
        .collect();
    let law = LawFlow::constant(grid, EmpiricalMeasure::from_scalars(&[0.0]).unwrap());
    let ens = simulate_frozen_law_inputs(&grid, dy, &law, &inputs).unwrap();
    (0..inputs.len()).map(|i| ens.states()[[i, steps, 0]]).collect()
}

#[test]
fn refinement_differences_shrink() {
    use volterra_chaos::coefficients::{DiffusionSpec, DriftSpec};
    use volterra_chaos::kernels::KernelSpec;
    let fine_steps = 512;
    let fine_grid = TimeGrid::new(1.0, fine_steps).unwrap();
    let k = KernelSpec::fractional(0.1, 1.0).unwrap();
    let dy = volterra_chaos::Dynamics::new(
        k.clone(),
        k,
        DriftSpec::linear(-1.0, 0.0, 0.5),
        DiffusionSpec::Affine { s0: 0.5, s1: 0.2 },
    )
    .unwrap();
    let plan = NoisePlan::new(21);
    let init = InitSampler::dirac_scalar(1.0);
    let fine: Vec<PathInput> = (0..400).map(|i| PathInput::draw(&plan, i, &init, &fine_grid)).collect();
    let levels = [64, 128, 256, 512];
    let terminals: Vec<Vec<f64>> = levels
        .iter()
        .map(|&s| terminal_on_level(&dy, &fine, fine_steps, s))
        .collect();
    let diffs: Vec<f64> = terminals
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).sum::<f64>() / w[0].len() as f64)
        .collect();
    assert!(diffs.windows(2).all(|w| w[1] < w[0]), "{diffs:?}");
}

#[test]
fn law_does_not_depend_on_the_driver() {
    let grid = TimeGrid::new(1.0, 32).unwrap();
    let dy = mean_field(0.25, 1.0);
    let init = InitSampler::standard_gaussian(1);
    let n = 1000;
    let terminal = |seed: u64| -> Vec<f64> {
        let ens = simulate_particle_system(n, &grid, &dy, &init, &NoisePlan::new(seed)).unwrap();
        ens.marginal(grid.n_steps()).scalars()
    };
    let (a, b) = (terminal(1), terminal(2));
    let observed = wasserstein_1d(1.0, &a, &b).unwrap();
    // bootstrap null: both halves drawn from the pooled sample
    let pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut null: Vec<f64> = (0..400)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| *pooled.choose(&mut rng).unwrap()).collect();
            let y: Vec<f64> = (0..n).map(|_| *pooled.choose(&mut rng).unwrap()).collect();
            wasserstein_1d(1.0, &x, &y).unwrap()
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let q99 = null[(0.99 * null.len() as f64) as usize];
    assert!(observed < q99, "observed {observed}, 99% quantile {q99}");
}

#[test]
fn converged_flow_is_stable_under_the_solution_map() {
    let grid = TimeGrid::new(1.0, 32).unwrap();
    let dy = mean_field(0.25, 1.0);
    let init = InitSampler::standard_gaussian(1);
    let cfg = PicardConfig {
        m_law: 1024,
        tol: 1e-6,
        max_iters: 40,
        delta: 4.0,
        common_random_numbers: true,
    };
    let res = picard_solve(&grid, &dy, &init, &cfg, 17).unwrap();
    assert!(res.converged);
    let again = apply_solution_map(&grid, &dy, &init, &res).unwrap();
    let moved = res.law.sup_distance(&again, 4.0, Estimator::Sorted1d, 0).unwrap();
    assert!(moved < 2.0 * cfg.tol, "moved {moved}");
}

#[test]
fn brownian_ensemble_has_unit_variance_at_the_horizon() {
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let ens = simulate_particle_system(
        20_000,
        &grid,
        &brownian(1.0),
        &InitSampler::dirac_scalar(0.0),
        &NoisePlan::new(2),
    )
    .unwrap();
    let xs = ens.marginal(8).scalars();
    let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
    // standard error of the sample second moment is sqrt(2 / M)
    assert!((var - 1.0).abs() < 4.0 * (2.0 / xs.len() as f64).sqrt());
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn relabelling_particles_relabels_paths(
        perm in prop_oneof![permutation(2), permutation(5), permutation(16)],
        seed in any::<u64>(),
    ) {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let dy = mean_field(0.25, 1.0);
        let init = InitSampler::standard_gaussian(1);
        prop_assert!(exchangeability_check(perm.len(), &grid, &dy, &init, seed, &perm).unwrap());
    }
}

#[test]
fn shuffled_permutations_at_fixed_sizes() {
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let dy = mean_field(0.25, 1.0);
    let init = InitSampler::standard_gaussian(1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [2, 5, 16] {
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            assert!(exchangeability_check(n, &grid, &dy, &init, 8, &perm).unwrap());
        }
    }
}
