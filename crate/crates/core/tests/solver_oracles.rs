mod common;

use common::oracle;
use mconflict::probe::{
    lambda_max, logistic_loss_grad, prox_grad, train_lasso_logistic, Matrix, StepPolicy,
    TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(x: &[Vec<f64>]) -> Matrix<f64> {
    Matrix::from_rows(x).unwrap()
}

fn tight(lambda: f64) -> TrainConfig<f64> {
    TrainConfig {
        lambda,
        max_iters: 100_000,
        tol: 1e-14,
        ..TrainConfig::default()
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for inst in 0..20 {
        let (x, y) = oracle::random_instance(1000 + inst, 10, 5);
        let w: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
        let b = r.gen_range(-1.0..1.0);
        let lg = logistic_loss_grad(&w, b, &matrix(&x), &y).unwrap();
        let (fw, fb) = oracle::finite_difference_grad(&x, &y, &w, b, 1e-4);
        let num: Vec<f64> = lg.grad_w.iter().copied().chain([lg.grad_b]).collect();
        let fd: Vec<f64> = fw.into_iter().chain([fb]).collect();
        let diff = num.iter().zip(&fd).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        let scale = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff / scale < 1e-5, "instance {inst}: rel err {}", diff / scale);
        assert!((lg.loss - oracle::objective(&x, &y, &w, b, 0.0)).abs() < 1e-12);
    }
}

#[test]
fn tiny_instance_matches_coordinate_descent() {
    let (x, y) = oracle::random_instance(5, 20, 3);
    let xs = oracle::standardize(&x);
    let (_, _, reference) = oracle::coordinate_descent(&xs, &y, 0.01);
    let fit = train_lasso_logistic(&matrix(&x), &y, &tight(0.01)).unwrap();
    assert!(
        (fit.train_meta.final_objective - reference).abs() < 1e-4,
        "{} vs {reference}",
        fit.train_meta.final_objective
    );
}

#[test]
fn above_lambda_max_gives_null_model() {
    for seed in 0..10 {
        let (x, y) = oracle::random_instance(seed, 30, 6);
        let xs = oracle::standardize(&x);
        let lmax = oracle::lambda_max(&xs, &y);
        let lib = lambda_max(&matrix(&xs), &y).unwrap();
        assert!((lmax - lib).abs() <= 1e-12 * lmax.max(1.0));
        let fit = train_lasso_logistic(&matrix(&x), &y, &tight(lmax * 1.0001)).unwrap();
        assert!(fit.weights.iter().all(|&w| w == 0.0), "{:?}", fit.weights);
        let ybar = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
        assert!((fit.bias - (ybar / (1.0 - ybar)).ln()).abs() < 1e-6);
    }
}

#[test]
fn planted_sign_feature_is_selected_alone() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let normal = rand_distr::StandardNormal;
    let x: Vec<Vec<f64>> = (0..400)
        .map(|_| (0..5).map(|_| r.sample::<f64, _>(normal)).collect())
        .collect();
    let y: Vec<bool> = x.iter().map(|row| row[0] > 0.0).collect();
    let fit = train_lasso_logistic(&matrix(&x), &y, &tight(0.05)).unwrap();
    assert!(fit.weights[0] > 0.0);
    assert!(fit.weights[1..].iter().all(|&w| w == 0.0), "{:?}", fit.weights);
}

#[test]
fn fixed_step_and_plain_ista_agree_with_default() {
    let (x, y) = oracle::random_instance(77, 40, 4);
    let xs = matrix(&oracle::standardize(&x));
    let reference = prox_grad(&xs, &y, &tight(0.02), None).unwrap().objective();
    for (policy, accelerated) in [
        (StepPolicy::Fixed, false),
        (StepPolicy::Fixed, true),
        (StepPolicy::Backtracking, false),
    ] {
        let cfg = TrainConfig {
            step_policy: policy,
            accelerated,
            ..tight(0.02)
        };
        let out = prox_grad(&xs, &y, &cfg, None).unwrap();
        assert!((out.objective() - reference).abs() < 1e-8, "{policy:?} {accelerated}");
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn longer_runs_do_not_improve_much() {
    let (x, y) = oracle::random_instance(9, 50, 8);
    let xs = matrix(&oracle::standardize(&x));
    let cfg = TrainConfig {
        lambda: 0.005,
        tol: 1e-6,
        ..TrainConfig::default()
    };
    let short = prox_grad(&xs, &y, &cfg, None).unwrap();
    let long = prox_grad(&xs, &y, &tight(0.005), None).unwrap();
    assert!(short.objective() - long.objective() <= cfg.tol * 10.0 * short.objective().abs().max(1.0));
}

#[test]
fn single_precision_solver_tracks_double() {
    let (x, y) = oracle::random_instance(21, 50, 8);
    let x32: Vec<Vec<f32>> = x.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
    let f64_fit = train_lasso_logistic(&matrix(&x), &y, &tight(0.01)).unwrap();
    let f32_fit = train_lasso_logistic(
        &Matrix::from_rows(&x32).unwrap(),
        &y,
        &TrainConfig {
            lambda: 0.01f32,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let gap = (f32_fit.train_meta.final_objective as f64 - f64_fit.train_meta.final_objective).abs();
    assert!(gap < 1e-4, "gap {gap}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_never_increases(seed in 0u64..10_000, n in 5usize..50, d in 1usize..8, k in 0i32..4) {
        let (x, y) = oracle::random_instance(seed, n, d);
        let xs = matrix(&oracle::standardize(&x));
        let lmax = lambda_max(&xs, &y).unwrap();
        let out = prox_grad(&xs, &y, &tight(lmax * 10f64.powi(-k)), None).unwrap();
        for w in out.history.windows(2) {
            prop_assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn l1_norm_shrinks_with_lambda(seed in 0u64..10_000) {
        let (x, y) = oracle::random_instance(seed, 40, 5);
        let xs = matrix(&oracle::standardize(&x));
        let lmax = lambda_max(&xs, &y).unwrap();
        let mut prev = f64::INFINITY;
        for k in (0..=6).rev() {
            let margin = if k == 0 { 1.0001 } else { 1.0 };
            let lambda = margin * lmax * 10f64.powf(-(k as f64) / 2.0);
            let out = prox_grad(&xs, &y, &tight(lambda), None).unwrap();
            let norm: f64 = out.weights.iter().map(|w| w.abs()).sum();
            prop_assert!(norm <= prev + 1e-6, "λ={lambda}: {norm} > {prev}");
            prev = norm;
        }
        prop_assert_eq!(prev, 0.0);
    }
}
