//! Gradient operator, its adjoint and the Hessian bounds built on them.

mod common;

use common::*;
use proptest::prelude::*;
use whitemap::image::GradField;
use whitemap::{grad_adjoint, grad_apply, lipschitz_bound, HessianOp, Image, ParamMap};

#[test]
fn adjoint_identity_on_random_grids() {
    let mut rng = rng(11);
    for k in 0..200 {
        let rows = 1 + k % 16;
        let cols = 1 + (k * 7) % 16;
        let x = random_image(&mut rng, rows, cols);
        let g = random_field(&mut rng, rows, cols);
        let lhs = grad_apply(&x).dot(&g);
        let rhs = x.dot(&grad_adjoint(&g));
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{rows}x{cols}: {lhs} vs {rhs}");
    }
}

#[test]
fn fast_operator_matches_dense_matrix() {
    let mut rng = rng(3);
    for (rows, cols) in [(3, 5), (4, 4), (6, 2)] {
        let d = dense_grad(rows, cols);
        let x = random_image(&mut rng, rows, cols);
        let g = grad_apply(&x);
        for (i, row) in d.iter().enumerate() {
            let expect: f64 = row.iter().zip(x.data()).map(|(a, b)| a * b).sum();
            assert!((g.data()[i] - expect).abs() < 1e-14);
        }
    }
}

#[test]
fn operator_norm_squared_at_most_eight() {
    let mut rng = rng(5);
    for (rows, cols) in [(8, 8), (7, 10), (16, 16)] {
        let mut v = random_image(&mut rng, rows, cols);
        let mut est = 0.0;
        for _ in 0..500 {
            let w = grad_adjoint(&grad_apply(&v));
            est = w.norm() / v.norm();
            v = w.scale(1.0 / w.norm());
        }
        assert!(est <= 8.0 + 1e-9, "{est}");
        // even grids contain the checkerboard, which attains the bound
        if rows % 2 == 0 && cols % 2 == 0 {
            assert!(est > 7.9, "{est}");
        }
    }
}

#[test]
fn hessian_power_norm_below_lipschitz_bound() {
    let mut rng = rng(17);
    for k in 0..50 {
        let x = scene(&mut rng, 16, 16, 0.3);
        let eps = [0.01, 0.1, 0.5][k % 3];
        let beta: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-3.0..1.6)).collect();
        let p = ParamMap::per_pixel(beta);
        let op = HessianOp::new(&x, &p, eps);
        let est = op.power_norm(200);
        assert!(est <= lipschitz_bound(p.lambda_max(), eps) * (1.0 + 1e-12), "{est}");
        assert!(est >= 1.0);
    }
}

#[test]
fn strong_convexity_lower_bound() {
    let mut rng = rng(23);
    for _ in 0..50 {
        let x = scene(&mut rng, 8, 8, 0.5);
        let p = ParamMap::per_pixel((0..64).map(|_| rng.random_range(-4.0..1.6)).collect());
        let op = HessianOp::new(&x, &p, 0.1);
        let w = random_image(&mut rng, 8, 8).map(|v| v - 0.5);
        assert!(w.dot(&op.apply(&w)) >= w.dot(&w) * (1.0 - 1e-14));
    }
}

use rand::Rng;

proptest! {
    #[test]
    fn adjoint_identity_prop(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>()) {
        let mut rng = rng(seed);
        let x = random_image(&mut rng, rows, cols);
        let g = random_field(&mut rng, rows, cols);
        let lhs = grad_apply(&x).dot(&g);
        let rhs = x.dot(&grad_adjoint(&g));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn constants_are_annihilated(rows in 1usize..10, cols in 1usize..10, c in -5.0f64..5.0) {
        let g = grad_apply(&Image::filled(rows, cols, c));
        prop_assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn adjoint_output_sums_to_zero(rows in 1usize..10, cols in 1usize..10, seed in any::<u64>()) {
        let mut rng = rng(seed);
        let g: GradField = random_field(&mut rng, rows, cols);
        let s: f64 = grad_adjoint(&g).data().iter().sum();
        prop_assert!(s.abs() < 1e-12);
    }
}
