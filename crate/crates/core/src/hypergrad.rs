//! Hypergradients by implicit differentiation.
//!
//! At the lower-level minimizer `∇ₓF(x*; λ) = 0`, so
//! `dx*/dλ = −(∇²ₓF)⁻¹ ∂(∇ₓF)/∂λ` and, with `λ = exp(β)`,
//!
//! `∇_β Q = −exp(β) ⊙ [∂(∇ₓF)/∂λ]ᵀ (∇²ₓF)⁻¹ ∇ₓQ`.
//!
//! The Hessian system is solved matrix-free by conjugate gradients. Since
//! `∇ₓF` is linear in λ, column `j` of `∂(∇ₓF)/∂λ` is `Dᵀ` applied to the
//! Huber gradient of pixel `j` alone, and its transpose maps `w` to
//! `⟨∇h_ε((Dx*)_j), (Dw)_j⟩`.

use serde::{Deserialize, Serialize};

use crate::energy::{check_eps, huber_grad, HessianOp, ParamMap, ParamMode};
use crate::error::{Error, Result};
use crate::image::{dot, grad_apply, Image};
use crate::losses::{mse_eval, whiteness_eval, LossEval, LossKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    /// Relative residual target `‖Hw − b‖ ≤ tol·‖b‖`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 2_000 }
    }
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub w: Image,
    pub iterations: usize,
    /// Final residual norm `‖Hw − b‖`.
    pub residual: f64,
    pub converged: bool,
}

/// Solves `∇²ₓF(x*) w = rhs` by conjugate gradients from `w = 0`.
pub fn hess_solve(
    x_star: &Image,
    p: &ParamMap,
    eps: f64,
    rhs: &Image,
    cfg: &CgConfig,
) -> Result<CgSolution> {
    x_star.ensure_same_shape(rhs)?;
    p.check_pixels(x_star.len())?;
    check_eps(eps)?;
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidParameter("cg tolerance must be > 0".into()));
    }
    let op = HessianOp::new(x_star, p, eps);
    Ok(conjugate_gradient(&op, rhs, cfg))
}

pub(crate) fn conjugate_gradient(op: &HessianOp, rhs: &Image, cfg: &CgConfig) -> CgSolution {
    let n = rhs.len();
    let b = rhs.data();
    let target = cfg.tol * dot(b, b).sqrt();
    let mut w = vec![0.0; n];
    let mut r = b.to_vec();
    let mut d = r.clone();
    let mut hd = vec![0.0; n];
    let mut scratch = vec![0.0; 2 * n];
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while rr.sqrt() > target && iterations < cfg.max_iters {
        op.apply_into(&d, &mut scratch, &mut hd);
        let alpha = rr / dot(&d, &hd);
        for i in 0..n {
            w[i] += alpha * d[i];
            r[i] -= alpha * hd[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for i in 0..n {
            d[i] = r[i] + beta * d[i];
        }
        rr = rr_next;
        iterations += 1;
    }
    let residual = rr.sqrt();
    CgSolution {
        w: Image::from_raw(rhs.rows(), rhs.cols(), w),
        iterations,
        residual,
        converged: residual <= target,
    }
}

/// `c_j = ⟨∇h_ε((Dx*)_j), (Dw)_j⟩` for every pixel `j`.
pub fn cross_jacobian_transpose(x_star: &Image, eps: f64, w: &Image) -> Result<Vec<f64>> {
    x_star.ensure_same_shape(w)?;
    check_eps(eps)?;
    let dx = grad_apply(x_star);
    let dw = grad_apply(w);
    Ok((0..x_star.len())
        .map(|j| {
            let g = huber_grad(dx.at(j), eps);
            let v = dw.at(j);
            g[0] * v[0] + g[1] * v[1]
        })
        .collect())
}

/// Upper-level loss selection, carrying the reference image for MSE.
#[derive(Debug, Clone, Copy)]
pub enum UpperLoss<'a> {
    Whiteness,
    Mse { reference: &'a Image },
}

impl UpperLoss<'_> {
    pub fn kind(&self) -> LossKind {
        match self {
            UpperLoss::Whiteness => LossKind::Whiteness,
            UpperLoss::Mse { .. } => LossKind::Mse,
        }
    }

    pub fn evaluate(&self, x_star: &Image, y: &Image) -> Result<LossEval> {
        match self {
            UpperLoss::Whiteness => whiteness_eval(x_star, y),
            UpperLoss::Mse { reference } => mse_eval(x_star, reference),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HypergradResult {
    /// One entry in scalar mode, one per pixel otherwise.
    pub grad_beta: Vec<f64>,
    /// Upper loss at `x_star`.
    pub loss_value: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    /// Solution of the Hessian system.
    pub w: Image,
}

pub fn hypergrad(
    x_star: &Image,
    y: &Image,
    p: &ParamMap,
    eps: f64,
    loss: UpperLoss<'_>,
    cg: &CgConfig,
) -> Result<HypergradResult> {
    x_star.ensure_same_shape(y)?;
    let eval = loss.evaluate(x_star, y)?;
    let sol = hess_solve(x_star, p, eps, &eval.grad_x, cg)?;
    if !sol.converged {
        return Err(Error::NotConverged { solver: "conjugate gradient", iterations: sol.iterations });
    }
    let c = cross_jacobian_transpose(x_star, eps, &sol.w)?;
    let grad_beta = match p.mode() {
        ParamMode::PerPixel => c.iter().zip(p.lambda()).map(|(cj, l)| -l * cj).collect(),
        ParamMode::Scalar => vec![-p.lambda()[0] * c.iter().sum::<f64>()],
    };
    Ok(HypergradResult {
        grad_beta,
        loss_value: eval.value,
        cg_iterations: sol.iterations,
        cg_residual: sol.residual,
        w: sol.w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::hess_vec;

    fn wavy(rows: usize, cols: usize, phase: f64) -> Image {
        Image::from_fn(rows, cols, |r, c| (0.9 * r as f64 + 1.7 * c as f64 + phase).sin() * 0.3 + 0.5)
    }

    #[test]
    fn near_identity_for_tiny_lambda() {
        let x = wavy(6, 6, 0.0);
        let rhs = wavy(6, 6, 1.0);
        let p = ParamMap::per_pixel(vec![-30.0; 36]);
        let sol = hess_solve(&x, &p, 0.1, &rhs, &CgConfig::default()).unwrap();
        assert!(sol.w.sub(&rhs).norm() < 1e-10 * rhs.norm());
    }

    #[test]
    fn solve_inverts_hess_vec() {
        let x = wavy(8, 8, 0.3);
        let u = wavy(8, 8, 2.0);
        let p = ParamMap::per_pixel((0..64).map(|i| (i % 5) as f64 * 0.3 - 0.5).collect());
        let rhs = hess_vec(&x, &p, 0.1, &u).unwrap();
        let cfg = CgConfig { tol: 1e-12, max_iters: 5_000 };
        let sol = hess_solve(&x, &p, 0.1, &rhs, &cfg).unwrap();
        assert!(sol.converged);
        assert!(sol.w.sub(&u).norm() < 1e-9 * u.norm());
    }

    #[test]
    fn constant_solution_has_zero_cross_term() {
        let x = Image::filled(5, 5, 0.2);
        let c = cross_jacobian_transpose(&x, 0.1, &wavy(5, 5, 0.0)).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stationary_constant_gives_zero_hypergradient() {
        let x = Image::filled(6, 6, 0.5);
        let reference = x.clone();
        for p in [ParamMap::scalar(1.0), ParamMap::per_pixel(vec![1.0; 36])] {
            let h = hypergrad(&x, &x, &p, 0.1, UpperLoss::Mse { reference: &reference }, &CgConfig::default())
                .unwrap();
            assert!(h.grad_beta.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn exhausted_cg_is_flagged() {
        let x = wavy(8, 8, 0.1);
        let rhs = wavy(8, 8, 0.7);
        let p = ParamMap::scalar(1.0);
        let sol = hess_solve(&x, &p, 0.01, &rhs, &CgConfig { tol: 1e-14, max_iters: 2 }).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 2);
    }
}
