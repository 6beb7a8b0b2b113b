#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whitemap::image::GradField;
use whitemap::Image;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut impl Rng, rows: usize, cols: usize) -> Image {
    Image::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

pub fn random_field(rng: &mut impl Rng, rows: usize, cols: usize) -> GradField {
    GradField::new(rows, cols, (0..2 * rows * cols).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap()
}

/// Piecewise-constant test scene with mild noise, so gradients straddle the Huber knee.
pub fn scene(rng: &mut impl Rng, rows: usize, cols: usize, noise: f64) -> Image {
    Image::from_fn(rows, cols, |r, c| {
        let base = if r < rows / 2 { 0.2 } else { 0.7 } + if c < cols / 3 { 0.1 } else { 0.0 };
        base + noise * (rng.random::<f64>() - 0.5)
    })
}

/// Dense periodic forward-difference matrix, rows [horizontal; vertical].
pub fn dense_grad(rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let n = rows * cols;
    let mut m = vec![vec![0.0; n]; 2 * n];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            m[i][i] = -1.0;
            m[i][r * cols + (c + 1) % cols] += 1.0;
            m[n + i][i] = -1.0;
            m[n + i][((r + 1) % rows) * cols + c] += 1.0;
        }
    }
    m
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}
