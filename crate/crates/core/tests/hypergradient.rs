//! Full-pipeline finite-difference checks of the hypergradient.

mod common;

use common::*;
use rand::Rng;
use whitemap::{
    hypergrad, mse_eval, sc_agd, whiteness_value, CgConfig, Image, LowerConfig, ParamMap, UpperLoss,
};

const EPS: f64 = 0.1;

fn solve(y: &Image, p: &ParamMap) -> Image {
    let cfg = LowerConfig { tol: 1e-13, max_iters: 1_000_000 };
    let res = sc_agd(y, y, p, EPS, &cfg).unwrap();
    assert!(res.converged);
    res.x_star
}

fn loss_at(y: &Image, reference: Option<&Image>, p: &ParamMap) -> f64 {
    let x = solve(y, p);
    match reference {
        Some(r) => mse_eval(&x, r).unwrap().value,
        None => whiteness_value(&x, y).unwrap(),
    }
}

fn check(reference: Option<&Image>, y: &Image, p: &ParamMap, coords: &[usize]) -> f64 {
    let x = solve(y, p);
    let loss = match reference {
        Some(r) => UpperLoss::Mse { reference: r },
        None => UpperLoss::Whiteness,
    };
    let cg = CgConfig { tol: 1e-12, max_iters: 10_000 };
    let hg = hypergrad(&x, y, p, EPS, loss, &cg).unwrap();
    let h = 1e-4;
    let mut worst = 0.0f64;
    for &j in coords {
        let mut plus = p.beta().to_vec();
        plus[j] += h;
        let mut minus = p.beta().to_vec();
        minus[j] -= h;
        let fd = (loss_at(y, reference, &p.with_beta(plus)) - loss_at(y, reference, &p.with_beta(minus)))
            / (2.0 * h);
        let e = rel_err(hg.grad_beta[j], fd);
        // near-zero entries: compare against the gradient's overall scale
        let scale = hg.grad_beta.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let e = e.min((hg.grad_beta[j] - fd).abs() / scale);
        worst = worst.max(e);
    }
    worst
}

fn instance(seed: u64) -> (Image, Image, ParamMap) {
    let mut r = rng(seed);
    let clean = scene(&mut r, 6, 6, 0.0);
    let noisy = Image::from_fn(6, 6, |i, j| clean.get(i, j) + 0.1 * (r.random::<f64>() - 0.5));
    let p = ParamMap::per_pixel((0..36).map(|_| -3.0 + r.random::<f64>()).collect());
    (clean, noisy, p)
}

#[test]
fn mse_per_pixel_matches_finite_differences() {
    let (clean, noisy, p) = instance(11);
    let err = check(Some(&clean), &noisy, &p, &(0..36).step_by(2).collect::<Vec<_>>());
    assert!(err < 1e-3, "relative error {err:e}");
}

#[test]
fn whiteness_per_pixel_matches_finite_differences() {
    let (_, noisy, p) = instance(12);
    let err = check(None, &noisy, &p, &(1..36).step_by(2).collect::<Vec<_>>());
    assert!(err < 1e-3, "relative error {err:e}");
}

#[test]
fn scalar_modes_match_finite_differences() {
    let (clean, noisy, _) = instance(13);
    let p = ParamMap::scalar(-2.5);
    assert!(check(Some(&clean), &noisy, &p, &[0]) < 1e-3);
    assert!(check(None, &noisy, &p, &[0]) < 1e-3);
}

#[test]
fn scalar_gradient_is_sum_of_per_pixel_entries() {
    let (clean, noisy, _) = instance(14);
    let cg = CgConfig { tol: 1e-12, max_iters: 10_000 };
    let beta = -2.0;
    let scalar = ParamMap::scalar(beta);
    let pixels = ParamMap::per_pixel(vec![beta; 36]);
    let x = solve(&noisy, &scalar);
    for loss in [UpperLoss::Whiteness, UpperLoss::Mse { reference: &clean }] {
        let a = hypergrad(&x, &noisy, &scalar, EPS, loss, &cg).unwrap();
        let b = hypergrad(&x, &noisy, &pixels, EPS, loss, &cg).unwrap();
        let sum: f64 = b.grad_beta.iter().sum();
        assert!(rel_err(a.grad_beta[0], sum) < 1e-10);
    }
}

#[test]
fn mse_hypergradient_negative_for_tiny_lambda() {
    for seed in 0..3 {
        let (clean, noisy, _) = instance(20 + seed);
        let p = ParamMap::scalar(-6.0);
        let x = solve(&noisy, &p);
        let hg = hypergrad(&x, &noisy, &p, EPS, UpperLoss::Mse { reference: &clean }, &CgConfig::default())
            .unwrap();
        assert!(hg.grad_beta[0] < 0.0, "seed {seed}: {}", hg.grad_beta[0]);
    }
}
