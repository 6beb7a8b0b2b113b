//! Strongly convex Nesterov accelerated gradient descent for the lower-level
//! denoising problem.

use serde::{Deserialize, Serialize};

use crate::energy::{check_eps, energy_grad_into, lipschitz_bound, ParamMap};
use crate::error::{Error, Result};
use crate::image::{norm, Image};

/// Description of the stopping rule, recorded alongside results.
pub const STOPPING_RULE: &str = "||x_{t+1} - x_t||_2 <= tol * max(1, ||x_t||_2)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LowerConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iters: 50_000 }
    }
}

#[derive(Debug, Clone)]
pub struct LowerSolveResult {
    pub x_star: Image,
    pub iterations: usize,
    pub final_step_norm: f64,
    pub grad_norm: f64,
    pub step_size: f64,
    /// False when `max_iters` ran out before the stopping rule fired; `x_star`
    /// is then the last iterate.
    pub converged: bool,
}

/// Minimizes `F_ε(·; y, λ)` from `x0` with step `1/L̄` and strong convexity
/// modulus 1.
pub fn sc_agd(
    x0: &Image,
    y: &Image,
    p: &ParamMap,
    eps: f64,
    cfg: &LowerConfig,
) -> Result<LowerSolveResult> {
    x0.ensure_same_shape(y)?;
    p.check_pixels(y.len())?;
    check_eps(eps)?;
    if !(cfg.tol > 0.0) || cfg.max_iters == 0 {
        return Err(Error::InvalidParameter("tol must be > 0 and max_iters >= 1".into()));
    }
    let (rows, cols) = y.shape();
    let n = y.len();
    let mu = 1.0;
    let lip = lipschitz_bound(p.lambda_max(), eps);
    let tau = 1.0 / lip;
    let kappa = mu / lip;

    let mut x_prev = x0.data().to_vec();
    let mut x = x0.data().to_vec();
    let mut z = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut scratch = vec![0.0; 2 * n];
    let mut theta = 1.0f64;
    let mut iterations = 0;
    let mut step_norm = f64::INFINITY;
    let mut converged = false;

    while iterations < cfg.max_iters {
        let a = 1.0 - kappa * theta * theta;
        let theta_next = 0.5 * (a + (a * a + 4.0 * theta * theta).sqrt());
        let momentum = (theta - 1.0) / theta_next * (1.0 - theta_next * mu * tau) / (1.0 - tau * mu);
        for i in 0..n {
            z[i] = x[i] + momentum * (x[i] - x_prev[i]);
        }
        energy_grad_into(rows, cols, &z, y.data(), p, eps, &mut scratch, &mut grad);
        // x_prev <- x_{t+1}, then swap so that x holds x_{t+1} and x_prev holds x_t
        let mut diff = 0.0;
        for i in 0..n {
            let next = z[i] - tau * grad[i];
            let d = next - x[i];
            diff += d * d;
            x_prev[i] = next;
        }
        std::mem::swap(&mut x, &mut x_prev);
        theta = theta_next;
        iterations += 1;
        step_norm = diff.sqrt();
        if !step_norm.is_finite() {
            return Err(Error::NonFinite("lower-level solver"));
        }
        if step_norm <= cfg.tol * norm(&x_prev).max(1.0) {
            converged = true;
            break;
        }
    }

    energy_grad_into(rows, cols, &x, y.data(), p, eps, &mut scratch, &mut grad);
    Ok(LowerSolveResult {
        x_star: Image::from_raw(rows, cols, x),
        iterations,
        final_step_norm: step_norm,
        grad_norm: norm(&grad),
        step_size: tau,
        converged,
    })
}
