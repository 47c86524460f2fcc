#![allow(dead_code)]

use ndarray::Array2;
use volterra_chaos::coefficients::{DiffusionSpec, DriftSpec};
use volterra_chaos::engine::Dynamics;
use volterra_chaos::kernels::KernelSpec;
use volterra_chaos::measures::EmpiricalMeasure;

/// `min_sigma (1/N) sum_i |x_i - y_sigma(i)|^p` over all `N!` permutations.
pub fn brute_force_pow(p: f64, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let n = x.nrows();
    let cost = |i: usize, j: usize| -> f64 {
        let sq: f64 = x.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
        sq.sqrt().powf(p)
    };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |sigma| {
        let total: f64 = sigma.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
        best = best.min(total);
    });
    best / n as f64
}

fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

pub fn cloud(points: Vec<f64>, d: usize) -> EmpiricalMeasure {
    let n = points.len() / d;
    EmpiricalMeasure::new(Array2::from_shape_vec((n, d), points).unwrap()).unwrap()
}

pub fn brownian(horizon: f64) -> Dynamics {
    let k = KernelSpec::constant(1.0, horizon).unwrap();
    Dynamics::new(k.clone(), k, DriftSpec::Zero, DiffusionSpec::ConstantVol { s: 1.0 }).unwrap()
}

pub fn mean_field(alpha: f64, horizon: f64) -> Dynamics {
    let k = KernelSpec::fractional(alpha, horizon).unwrap();
    Dynamics::new(
        k.clone(),
        k,
        DriftSpec::linear(-1.0, 0.5, 0.0),
        DiffusionSpec::AffineMean {
            s0: 0.2,
            s1: 0.1,
            s2: 0.1,
        },
    )
    .unwrap()
}
