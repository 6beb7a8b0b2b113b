//! The smoothed weighted-TV denoising energy
//!
//! `F(x) = ½‖x − y‖² + Σᵢ λᵢ h_ε((Dx)ᵢ)`
//!
//! with `h_ε` the C² Huber function (quadratic-quartic inside the ball of
//! radius ε, shifted norm outside). `F` is 1-strongly convex and its
//! gradient is `(1 + 12 λmax/ε)`-Lipschitz for the periodic difference
//! operator, whose squared norm is at most 8.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{dot, grad_adjoint_into, grad_into, Image};

/// Default Huber knee for the per-pixel weighted model.
pub const DEFAULT_EPSILON_WTV: f64 = 1e-1;
/// Default Huber knee for the scalar TV model.
pub const DEFAULT_EPSILON_TV: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamMode {
    Scalar,
    PerPixel,
}

/// Regularization weights parameterized as `λ = exp(β)`.
///
/// In scalar mode a single β is shared by every pixel; in per-pixel mode
/// there is one β per pixel, in the image's row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMap {
    mode: ParamMode,
    beta: Vec<f64>,
    lambda: Vec<f64>,
}

impl ParamMap {
    pub fn scalar(beta: f64) -> Self {
        Self::from_parts(ParamMode::Scalar, vec![beta])
    }

    pub fn per_pixel(beta: Vec<f64>) -> Self {
        assert!(!beta.is_empty(), "empty parameter map");
        Self::from_parts(ParamMode::PerPixel, beta)
    }

    pub fn constant(mode: ParamMode, pixels: usize, beta: f64) -> Self {
        match mode {
            ParamMode::Scalar => Self::scalar(beta),
            ParamMode::PerPixel => Self::per_pixel(vec![beta; pixels]),
        }
    }

    fn from_parts(mode: ParamMode, beta: Vec<f64>) -> Self {
        let lambda = beta.iter().map(|b| b.exp()).collect();
        Self { mode, beta, lambda }
    }

    pub fn mode(&self) -> ParamMode {
        self.mode
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// `exp(β)`; one entry in scalar mode.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    #[inline]
    pub fn weight(&self, pixel: usize) -> f64 {
        match self.mode {
            ParamMode::Scalar => self.lambda[0],
            ParamMode::PerPixel => self.lambda[pixel],
        }
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// λ expanded to one entry per pixel.
    pub fn lambda_field(&self, pixels: usize) -> Vec<f64> {
        (0..pixels).map(|i| self.weight(i)).collect()
    }

    pub fn beta_field(&self, pixels: usize) -> Vec<f64> {
        match self.mode {
            ParamMode::Scalar => vec![self.beta[0]; pixels],
            ParamMode::PerPixel => self.beta.clone(),
        }
    }

    pub fn with_beta(&self, beta: Vec<f64>) -> Self {
        assert_eq!(beta.len(), self.beta.len());
        Self::from_parts(self.mode, beta)
    }

    pub(crate) fn check_pixels(&self, pixels: usize) -> Result<()> {
        if self.mode == ParamMode::PerPixel && self.beta.len() != pixels {
            return Err(Error::InvalidParameter(format!(
                "parameter map has {} entries for {pixels} pixels",
                self.beta.len()
            )));
        }
        Ok(())
    }
}

/// `h_ε(v)`.
#[inline]
pub fn huber_value(v: [f64; 2], eps: f64) -> f64 {
    let s = v[0] * v[0] + v[1] * v[1];
    if s < eps * eps {
        0.75 / eps * s - s * s / (8.0 * eps * eps * eps)
    } else {
        s.sqrt() - 0.375 * eps
    }
}

/// `∇h_ε(v)`; its norm never exceeds 1.
#[inline]
pub fn huber_grad(v: [f64; 2], eps: f64) -> [f64; 2] {
    let s = v[0] * v[0] + v[1] * v[1];
    let k = huber_grad_scale(s, eps);
    [k * v[0], k * v[1]]
}

#[inline]
fn huber_grad_scale(s: f64, eps: f64) -> f64 {
    if s < eps * eps {
        1.5 / eps - s / (2.0 * eps * eps * eps)
    } else {
        1.0 / s.sqrt()
    }
}

/// `∇²h_ε(v)` as a symmetric 2×2 matrix, positive semidefinite with largest
/// eigenvalue at most `3/(2ε)`.
#[inline]
pub fn huber_hess(v: [f64; 2], eps: f64) -> [[f64; 2]; 2] {
    let [a, b, c] = huber_hess_packed(v, eps);
    [[a, b], [b, c]]
}

/// Upper triangle `(h00, h01, h11)` of the Huber Hessian.
#[inline]
fn huber_hess_packed(v: [f64; 2], eps: f64) -> [f64; 3] {
    let s = v[0] * v[0] + v[1] * v[1];
    let (diag, outer) = if s < eps * eps {
        let e3 = eps * eps * eps;
        (1.5 / eps - s / (2.0 * e3), -1.0 / e3)
    } else {
        let norm = s.sqrt();
        (1.0 / norm, -1.0 / (s * norm))
    };
    [
        diag + outer * v[0] * v[0],
        outer * v[0] * v[1],
        diag + outer * v[1] * v[1],
    ]
}

/// `L̄ = 1 + 12 λmax / ε`, an upper bound on the Lipschitz constant of `∇F`.
pub fn lipschitz_bound(lambda_max: f64, eps: f64) -> f64 {
    1.0 + 12.0 * lambda_max / eps
}

fn check(x: &Image, y: &Image, p: &ParamMap, eps: f64) -> Result<()> {
    x.ensure_same_shape(y)?;
    p.check_pixels(x.len())?;
    check_eps(eps)
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {eps}")));
    }
    Ok(())
}

pub fn energy_value(x: &Image, y: &Image, p: &ParamMap, eps: f64) -> Result<f64> {
    check(x, y, p, eps)?;
    Ok(energy_value_raw(x, y, p, eps))
}

pub(crate) fn energy_value_raw(x: &Image, y: &Image, p: &ParamMap, eps: f64) -> f64 {
    let n = x.len();
    let mut dx = vec![0.0; 2 * n];
    grad_into(x.rows(), x.cols(), x.data(), &mut dx);
    let fidelity: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    let reg: f64 = (0..n).map(|i| p.weight(i) * huber_value([dx[i], dx[i + n]], eps)).sum();
    0.5 * fidelity + reg
}

pub fn energy_grad(x: &Image, y: &Image, p: &ParamMap, eps: f64) -> Result<Image> {
    check(x, y, p, eps)?;
    let mut out = vec![0.0; x.len()];
    let mut scratch = vec![0.0; 2 * x.len()];
    energy_grad_into(x.rows(), x.cols(), x.data(), y.data(), p, eps, &mut scratch, &mut out);
    Ok(Image::from_raw(x.rows(), x.cols(), out))
}

/// `out = (x − y) + Dᵀ(Λ ⊙ ∇H_ε(Dx))`; `scratch` holds `2n` entries.
#[allow(clippy::too_many_arguments)]
pub(crate) fn energy_grad_into(
    rows: usize,
    cols: usize,
    x: &[f64],
    y: &[f64],
    p: &ParamMap,
    eps: f64,
    scratch: &mut [f64],
    out: &mut [f64],
) {
    let n = rows * cols;
    grad_into(rows, cols, x, scratch);
    let (gh, gv) = scratch.split_at_mut(n);
    for i in 0..n {
        let k = p.weight(i) * huber_grad_scale(gh[i] * gh[i] + gv[i] * gv[i], eps);
        gh[i] *= k;
        gv[i] *= k;
    }
    grad_adjoint_into(rows, cols, scratch, out);
    for i in 0..n {
        out[i] += x[i] - y[i];
    }
}

/// `w + Dᵀ diag(Λ) ∇²H_ε(Dx) D w`.
pub fn hess_vec(x: &Image, p: &ParamMap, eps: f64, w: &Image) -> Result<Image> {
    x.ensure_same_shape(w)?;
    p.check_pixels(x.len())?;
    check_eps(eps)?;
    Ok(HessianOp::new(x, p, eps).apply(w))
}

/// The Hessian of `F` at a fixed point, with the λ-weighted 2×2 Huber blocks
/// precomputed so repeated products cost two difference passes each.
#[derive(Debug, Clone)]
pub struct HessianOp {
    rows: usize,
    cols: usize,
    blocks: Vec<[f64; 3]>,
}

impl HessianOp {
    pub fn new(x: &Image, p: &ParamMap, eps: f64) -> Self {
        let n = x.len();
        let mut dx = vec![0.0; 2 * n];
        grad_into(x.rows(), x.cols(), x.data(), &mut dx);
        let blocks = (0..n)
            .map(|i| {
                let w = p.weight(i);
                let [a, b, c] = huber_hess_packed([dx[i], dx[i + n]], eps);
                [w * a, w * b, w * c]
            })
            .collect();
        Self { rows: x.rows(), cols: x.cols(), blocks }
    }

    pub fn pixels(&self) -> usize {
        self.blocks.len()
    }

    pub fn apply(&self, w: &Image) -> Image {
        let mut out = vec![0.0; self.pixels()];
        let mut scratch = vec![0.0; 2 * self.pixels()];
        self.apply_into(w.data(), &mut scratch, &mut out);
        Image::from_raw(self.rows, self.cols, out)
    }

    pub(crate) fn apply_into(&self, w: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let n = self.pixels();
        grad_into(self.rows, self.cols, w, scratch);
        let (gh, gv) = scratch.split_at_mut(n);
        for (i, &[a, b, c]) in self.blocks.iter().enumerate() {
            let (h, v) = (gh[i], gv[i]);
            gh[i] = a * h + b * v;
            gv[i] = b * h + c * v;
        }
        grad_adjoint_into(self.rows, self.cols, scratch, out);
        for i in 0..n {
            out[i] += w[i];
        }
    }

    /// Largest eigenvalue estimate by power iteration from a fixed start.
    pub fn power_norm(&self, iterations: usize) -> f64 {
        let n = self.pixels();
        let mut v: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.618_033_988_7).fract() - 0.5).collect();
        let mut hv = vec![0.0; n];
        let mut scratch = vec![0.0; 2 * n];
        let mut estimate = 0.0;
        for _ in 0..iterations {
            let norm = dot(&v, &v).sqrt();
            v.iter_mut().for_each(|e| *e /= norm);
            self.apply_into(&v, &mut scratch, &mut hv);
            estimate = dot(&v, &hv);
            std::mem::swap(&mut v, &mut hv);
        }
        estimate
    }
}
