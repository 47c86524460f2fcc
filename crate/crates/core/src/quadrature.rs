//! Numerical integration: globally adaptive Gauss–Kronrod (7/15) and a
//! fixed 3-point Gauss–Legendre rule for per-step kernel weights.

use crate::error::{Error, Result};

// Kronrod nodes (non-negative half) for the 15-point rule, with the
// embedded 7-point Gauss weights on the odd entries.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Gauss–Legendre 3-point nodes and weights on [-1, 1].
pub const GL3_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
pub const GL3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

pub const DEFAULT_REL_TOL: f64 = 1e-8;
const MAX_INTERVALS: usize = 4000;

/// 3-point Gauss–Legendre approximation of the integral of `f` over [a, b].
pub fn gauss_legendre3(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    GL3_NODES
        .iter()
        .zip(GL3_WEIGHTS)
        .map(|(&x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> Segment {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for i in 0..7 {
        let dx = half * XGK[i];
        let pair = f(mid - dx) + f(mid + dx);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Adaptive integration of `f` over [a, b] to the given relative tolerance.
///
/// Endpoints are never evaluated, so integrable endpoint singularities are
/// tolerated (convergence is slower there; see [`integrate_singular_left`]).
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    integrate_tol(f, a, b, rel_tol, 0.0)
}

/// [`integrate`] that also stops once the error estimate is below `abs_tol`.
pub fn integrate_tol(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut segments = vec![gk15(&f, a, b)];
    loop {
        let total: f64 = segments.iter().map(|s| s.value).sum();
        let err: f64 = segments.iter().map(|s| s.error).sum();
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::QuadratureFailure {
                a,
                b,
                estimate: total,
                error: err,
                tol: rel_tol,
            });
        }
        if err <= rel_tol * total.abs() || err <= abs_tol.max(1e-300) {
            return Ok(total);
        }
        if segments.len() >= MAX_INTERVALS {
            return Err(Error::QuadratureFailure {
                a,
                b,
                estimate: total,
                error: err,
                tol: rel_tol,
            });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("non-empty");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            return Err(Error::QuadratureFailure {
                a,
                b,
                estimate: total,
                error: err,
                tol: rel_tol,
            });
        }
        segments.push(gk15(&f, seg.a, mid));
        segments.push(gk15(&f, mid, seg.b));
    }
}

/// Integrates `f` over [a, b] when `f(x)` behaves like `(x - a)^(-power)`
/// near `a`, with `power < 1`.
///
/// Substituting `x = a + (b - a) w^m`, `m = 1 / (1 - power)`, makes the
/// transformed integrand bounded at `w = 0`.
pub fn integrate_singular_left(f: impl Fn(f64) -> f64, a: f64, b: f64, power: f64, rel_tol: f64) -> Result<f64> {
    if power <= 0.0 {
        return integrate(f, a, b, rel_tol);
    }
    let m = 1.0 / (1.0 - power);
    let len = b - a;
    integrate(
        |w| {
            let x = a + len * w.powf(m);
            f(x) * len * m * w.powf(m - 1.0)
        },
        0.0,
        1.0,
        rel_tol,
    )
}
