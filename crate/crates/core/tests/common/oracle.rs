//! Reference computations that share no code with the library solvers.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sig(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log1pexp(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Naive penalized objective, direct from the definition.
pub fn objective(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = x.len() as f64;
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let z: f64 = xi.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
            log1pexp(z) - if yi { z } else { 0.0 }
        })
        .sum::<f64>()
        / n;
    loss + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Root of a non-decreasing function by bracket expansion and bisection.
fn increasing_root(f: impl Fn(f64) -> f64, start: f64) -> f64 {
    let (mut lo, mut hi) = (start - 1.0, start + 1.0);
    while f(lo) > 0.0 {
        lo -= 2.0 * (hi - lo);
    }
    while f(hi) < 0.0 {
        hi += 2.0 * (hi - lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Cyclic coordinate descent with exact one-dimensional minimization: each
/// weight is either zero (subgradient condition) or the root of
/// `∂f/∂wⱼ ± λ`, found by bisection; the bias solves `∂f/∂b = 0`.
pub fn coordinate_descent(x: &[Vec<f64>], y: &[bool], lambda: f64) -> (Vec<f64>, f64, f64) {
    let n = x.len();
    let d = x[0].len();
    let yv: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut z = vec![0.0; n];
    for _sweep in 0..20_000 {
        let mut delta: f64 = 0.0;
        for j in 0..d {
            let base: Vec<f64> = (0..n).map(|i| z[i] - w[j] * x[i][j]).collect();
            let g = |t: f64| -> f64 {
                (0..n).map(|i| (sig(base[i] + t * x[i][j]) - yv[i]) * x[i][j]).sum::<f64>()
                    / n as f64
            };
            let g0 = g(0.0);
            let new = if g0.abs() <= lambda {
                0.0
            } else if g0 < -lambda {
                increasing_root(|t| g(t) + lambda, w[j].max(0.0))
            } else {
                increasing_root(|t| g(t) - lambda, w[j].min(0.0))
            };
            delta = delta.max((new - w[j]).abs());
            for i in 0..n {
                z[i] = base[i] + new * x[i][j];
            }
            w[j] = new;
        }
        let base: Vec<f64> = z.iter().map(|zi| zi - b).collect();
        let gb = |t: f64| (0..n).map(|i| sig(base[i] + t) - yv[i]).sum::<f64>() / n as f64;
        let nb = increasing_root(gb, b);
        delta = delta.max((nb - b).abs());
        for i in 0..n {
            z[i] = base[i] + nb;
        }
        b = nb;
        if delta < 1e-13 {
            break;
        }
    }
    let obj = objective(x, y, &w, b, lambda);
    (w, b, obj)
}

/// Central differences of the unpenalized mean logistic loss.
pub fn finite_difference_grad(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, h: f64) -> (Vec<f64>, f64) {
    let mut gw = Vec::with_capacity(w.len());
    for j in 0..w.len() {
        let mut wp = w.to_vec();
        let mut wm = w.to_vec();
        wp[j] += h;
        wm[j] -= h;
        gw.push((objective(x, y, &wp, b, 0.0) - objective(x, y, &wm, b, 0.0)) / (2.0 * h));
    }
    let gb = (objective(x, y, w, b + h, 0.0) - objective(x, y, w, b - h, 0.0)) / (2.0 * h);
    (gw, gb)
}

/// Random instance with both classes present; features are standard normal
/// with a random linear signal.
pub fn random_instance(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::StandardNormal;
    loop {
        let beta: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(normal)).collect();
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.sample::<f64, _>(normal)).collect())
            .collect();
        let y: Vec<bool> = x
            .iter()
            .map(|xi| {
                let z: f64 = xi.iter().zip(&beta).map(|(a, c)| a * c).sum();
                r.gen::<f64>() < sig(z)
            })
            .collect();
        if y.iter().any(|&v| v) && y.iter().any(|&v| !v) {
            return (x, y);
        }
    }
}

/// Column z-scoring with population statistics, matching the probe contract.
pub fn standardize(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len() as f64;
    let d = x[0].len();
    let mut out = x.to_vec();
    for j in 0..d {
        let m = x.iter().map(|r| r[j]).sum::<f64>() / n;
        let s = (x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
        for r in out.iter_mut() {
            r[j] = (r[j] - m) / s;
        }
    }
    out
}

/// `‖Xᵀ(ȳ − y)‖_∞ / n`, computed directly.
pub fn lambda_max(x: &[Vec<f64>], y: &[bool]) -> f64 {
    let n = x.len() as f64;
    let ybar = y.iter().filter(|&&v| v).count() as f64 / n;
    (0..x[0].len())
        .map(|j| {
            x.iter()
                .zip(y)
                .map(|(r, &yi)| r[j] * (ybar - if yi { 1.0 } else { 0.0 }))
                .sum::<f64>()
                .abs()
                / n
        })
        .fold(0.0, f64::max)
}
