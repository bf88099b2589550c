//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the solver.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn check(u: f64, t: f64) -> f64 {
    if u < 0.0 {
        u * (t - 1.0)
    } else {
        u * t
    }
}

/// `Σ w_i ρ_{t_i}(y_i − x_iᵀβ)`, summed directly.
pub fn pinball_objective(x: &DMatrix<f64>, y: &[f64], t: &[f64], w: &[f64], beta: &[f64]) -> f64 {
    (0..x.nrows())
        .map(|i| {
            let fit: f64 = (0..x.ncols()).map(|k| x[(i, k)] * beta[k]).sum();
            w[i] * check(y[i] - fit, t[i])
        })
        .sum()
}

/// Exact minimizer along coordinate `k` with the others fixed. The
/// one-dimensional objective is convex and piecewise linear, so one of its
/// breakpoints attains the minimum.
fn coordinate_min(x: &DMatrix<f64>, y: &[f64], t: &[f64], w: &[f64], beta: &mut [f64], k: usize) {
    let mut best = pinball_objective(x, y, t, w, beta);
    let start = beta[k];
    let mut arg = start;
    for i in 0..x.nrows() {
        if x[(i, k)] == 0.0 {
            continue;
        }
        let other: f64 = (0..x.ncols())
            .filter(|&c| c != k)
            .map(|c| x[(i, c)] * beta[c])
            .sum();
        beta[k] = (y[i] - other) / x[(i, k)];
        let v = pinball_objective(x, y, t, w, beta);
        if v < best {
            best = v;
            arg = beta[k];
        }
    }
    beta[k] = arg;
}

/// Brute-force minimum for designs with at most two columns: every fit that
/// interpolates `q` rows (the vertices of the LP), then coordinate descent
/// from the best one to cover rank-deficient designs.
pub fn brute_force_pinball(x: &DMatrix<f64>, y: &[f64], t: &[f64], w: &[f64]) -> (Vec<f64>, f64) {
    let (r, q) = (x.nrows(), x.ncols());
    assert!(q <= 2, "oracle handles at most two columns");
    let mut best = vec![0.0; q];
    let mut best_val = pinball_objective(x, y, t, w, &best);
    let mut consider = |beta: Vec<f64>| {
        let v = pinball_objective(x, y, t, w, &beta);
        if v < best_val {
            best_val = v;
            best = beta;
        }
    };
    if q == 1 {
        for i in 0..r {
            if x[(i, 0)] != 0.0 {
                consider(vec![y[i] / x[(i, 0)]]);
            }
        }
    } else {
        for i in 0..r {
            for j in i + 1..r {
                let (a, b, c, d) = (x[(i, 0)], x[(i, 1)], x[(j, 0)], x[(j, 1)]);
                let det = a * d - b * c;
                if det.abs() > 1e-12 {
                    consider(vec![
                        (y[i] * d - b * y[j]) / det,
                        (a * y[j] - c * y[i]) / det,
                    ]);
                }
            }
        }
    }
    for _ in 0..20 {
        for k in 0..q {
            coordinate_min(x, y, t, w, &mut best, k);
        }
    }
    let val = pinball_objective(x, y, t, w, &best);
    (best, val)
}

/// Minimizer of `Σ ρ_τ(y_i − a)` over `a`, searched over the sample values.
pub fn sample_quantile(y: &[f64], tau: f64) -> f64 {
    let loss = |a: f64| y.iter().map(|&v| check(v - a, tau)).sum::<f64>();
    let mut best = (f64::INFINITY, f64::NAN);
    for &c in y {
        let l = loss(c);
        if l < best.0 {
            best = (l, c);
        }
    }
    best.1
}

/// `argmin` of a unimodal function on `[lo, hi]` by golden-section search.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..iters {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    (lo + hi) / 2.0
}

/// Random design with an intercept column when `q == 2`.
pub fn random_design<R: Rng>(rng: &mut R, r: usize, q: usize, intercept: bool) -> DMatrix<f64> {
    DMatrix::from_fn(r, q, |_, k| {
        if intercept && k == 0 {
            1.0
        } else {
            rng.random_range(-2.0..2.0)
        }
    })
}

pub fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        (values[k / 2 - 1] + values[k / 2]) / 2.0
    }
}
