//! Smoothed weighted-TV energy: value, gradient and Hessian against
//! finite differences and dense assembly.

mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use whitemap::{
    energy_grad, energy_value, grad_apply, hess_vec, huber_grad, huber_hess, huber_value,
    lipschitz_bound, Image, ParamMap,
};

fn random_params(rng: &mut impl Rng, n: usize) -> ParamMap {
    ParamMap::per_pixel((0..n).map(|_| rng.random_range(-2.0..1.0)).collect())
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = rng(1);
    for eps in [0.01, 0.1] {
        let y = scene(&mut rng, 8, 8, 0.2);
        let x = scene(&mut rng, 8, 8, 0.2);
        let p = random_params(&mut rng, 64);
        let g = energy_grad(&x, &y, &p, eps).unwrap();
        let h = 1e-6;
        let mut fd = vec![0.0; 64];
        for (j, slot) in fd.iter_mut().enumerate() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data_mut()[j] += h;
            xm.data_mut()[j] -= h;
            *slot = (energy_value(&xp, &y, &p, eps).unwrap() - energy_value(&xm, &y, &p, eps).unwrap()) / (2.0 * h);
        }
        assert!(max_rel_err(g.data(), &fd) < 1e-5, "{}", max_rel_err(g.data(), &fd));
    }
}

#[test]
fn value_matches_dense_assembly() {
    let mut rng = rng(2);
    let (rows, cols) = (4, 4);
    let d = dense_grad(rows, cols);
    let x = random_image(&mut rng, rows, cols);
    let y = random_image(&mut rng, rows, cols);
    let p = random_params(&mut rng, 16);
    let dx: Vec<f64> = d.iter().map(|row| row.iter().zip(x.data()).map(|(a, b)| a * b).sum()).collect();
    let mut expect = 0.5 * x.sub(&y).dot(&x.sub(&y));
    for i in 0..16 {
        expect += p.weight(i) * huber_value([dx[i], dx[16 + i]], 0.1);
    }
    let got = energy_value(&x, &y, &p, 0.1).unwrap();
    assert!(rel_err(got, expect) < 1e-13);
}

#[test]
fn hessian_matches_directional_differences() {
    let mut rng = rng(4);
    let y = scene(&mut rng, 8, 8, 0.2);
    let x = scene(&mut rng, 8, 8, 0.2);
    let p = random_params(&mut rng, 64);
    for _ in 0..5 {
        let w = random_image(&mut rng, 8, 8).map(|v| v - 0.5);
        let hv = hess_vec(&x, &p, 0.1, &w).unwrap();
        let d = 1e-6;
        let gp = energy_grad(&x.add(&w.scale(d)), &y, &p, 0.1).unwrap();
        let gm = energy_grad(&x.sub(&w.scale(d)), &y, &p, 0.1).unwrap();
        let fd = gp.sub(&gm).scale(0.5 / d);
        assert!(max_rel_err(hv.data(), fd.data()) < 1e-4);
    }
}

#[test]
fn hessian_is_symmetric() {
    let mut rng = rng(5);
    let x = scene(&mut rng, 8, 8, 0.4);
    let p = random_params(&mut rng, 64);
    for _ in 0..20 {
        let u = random_image(&mut rng, 8, 8);
        let w = random_image(&mut rng, 8, 8);
        let a = hess_vec(&x, &p, 0.1, &u).unwrap().dot(&w);
        let b = u.dot(&hess_vec(&x, &p, 0.1, &w).unwrap());
        assert!(rel_err(a, b) < 1e-10);
    }
}

#[test]
fn gradient_is_lipschitz_with_bound() {
    let mut rng = rng(6);
    let y = random_image(&mut rng, 10, 10);
    for eps in [0.01, 0.1] {
        let p = random_params(&mut rng, 100);
        let l = lipschitz_bound(p.lambda_max(), eps);
        for _ in 0..20 {
            let a = random_image(&mut rng, 10, 10);
            let b = a.add(&random_image(&mut rng, 10, 10).map(|v| (v - 0.5) * 0.05));
            let ga = energy_grad(&a, &y, &p, eps).unwrap();
            let gb = energy_grad(&b, &y, &p, eps).unwrap();
            assert!(ga.sub(&gb).norm() <= l * a.sub(&b).norm());
        }
    }
}

#[test]
fn tiny_weights_leave_the_fidelity_term() {
    let mut rng = rng(7);
    let x = random_image(&mut rng, 6, 6);
    let y = random_image(&mut rng, 6, 6);
    let p = ParamMap::scalar(-30.0);
    let got = energy_value(&x, &y, &p, 0.1).unwrap();
    assert!((got - 0.5 * x.sub(&y).dot(&x.sub(&y))).abs() < 1e-8);
}

#[test]
fn constant_data_has_zero_gradient() {
    let x = Image::filled(5, 5, 0.3);
    let g = energy_grad(&x, &x, &ParamMap::scalar(1.0), 0.1).unwrap();
    assert!(g.data().iter().all(|v| *v == 0.0));
    assert!(grad_apply(&x).norm() == 0.0);
}

fn eig2(m: [[f64; 2]; 2]) -> (f64, f64) {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 - disc, tr / 2.0 + disc)
}

#[test]
fn huber_knee_continuity() {
    for eps in [0.01, 0.1, 1.0] {
        for angle in [0.0, 0.7, 2.0, 4.0] {
            let dir = [f64::cos(angle), f64::sin(angle)];
            let at = |t: f64| [dir[0] * t, dir[1] * t];
            let (lo, hi) = (at(eps * (1.0 - 1e-13)), at(eps * (1.0 + 1e-13)));
            assert!(rel_err(huber_value(lo, eps), huber_value(hi, eps)) < 1e-12);
            assert!(rel_err(huber_value(at(eps), eps), 5.0 * eps / 8.0) < 1e-14);
            let (gl, gh) = (huber_grad(lo, eps), huber_grad(hi, eps));
            assert!((gl[0] - gh[0]).abs() + (gl[1] - gh[1]).abs() < 1e-11);
            let (hl, hh) = (huber_hess(lo, eps), huber_hess(hi, eps));
            let gap: f64 = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (hl[i][j] - hh[i][j]).abs()).sum();
            assert!(gap <= 1e-9 / eps, "{gap}");
        }
    }
}

#[test]
fn huber_hessian_saturates_at_origin() {
    let (lo, hi) = eig2(huber_hess([0.0, 0.0], 0.1));
    assert_eq!(lo, 15.0);
    assert_eq!(hi, 15.0);
}

proptest! {
    #[test]
    fn huber_derivatives_match_differences(vx in -0.5f64..0.5, vy in -0.5f64..0.5, eps in 0.02f64..0.3) {
        let v = [vx, vy];
        let g = huber_grad(v, eps);
        let h = 1e-7;
        for k in 0..2 {
            let mut p = v;
            let mut m = v;
            p[k] += h;
            m[k] -= h;
            let fd = (huber_value(p, eps) - huber_value(m, eps)) / (2.0 * h);
            prop_assert!((g[k] - fd).abs() <= 1e-6 * g[k].abs().max(1.0));
            let gp = huber_grad(p, eps);
            let gm = huber_grad(m, eps);
            let hess = huber_hess(v, eps);
            for i in 0..2 {
                let fdh = (gp[i] - gm[i]) / (2.0 * h);
                prop_assert!((hess[i][k] - fdh).abs() <= 1e-5 * hess[i][k].abs().max(1.0 / eps));
            }
        }
    }

    #[test]
    fn huber_gradient_is_bounded_and_hessian_psd(vx in -2.0f64..2.0, vy in -2.0f64..2.0, eps in 0.01f64..1.0) {
        let g = huber_grad([vx, vy], eps);
        prop_assert!((g[0] * g[0] + g[1] * g[1]).sqrt() <= 1.0 + 1e-12);
        let (lo, hi) = eig2(huber_hess([vx, vy], eps));
        prop_assert!(lo >= -1e-9);
        prop_assert!(hi <= 1.5 / eps * (1.0 + 1e-12));
    }
}
