//! Upper-level losses: supervised MSE and residual whiteness.
//!
//! The whiteness loss is half the squared norm of the normalized circular
//! autocorrelation of the residual `r = y − x`:
//!
//! `Q(x) = ½ ‖(r ⋆ r) / ‖r‖²‖²`
//!
//! where `(a ⋆ b)[j] = Σ_k a[k] b[(k + j) mod (n1, n2)]`. Correlations are
//! evaluated with 2-D FFTs. Writing `A = r ⋆ r` and `s = ‖r‖²`, the gradient
//! with respect to the residual is `(2/s²)(A ⋆ r) − (2‖A‖²/s³) r` (the
//! autocorrelation is even, so both correlation terms coincide).

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{dot, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Whiteness,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" | "whiteness" => Ok(LossKind::Whiteness),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::InvalidParameter(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    /// Gradient of the loss with respect to the reconstruction.
    pub grad_x: Image,
}

#[derive(Debug, Clone)]
pub struct Autocorr {
    /// Normalized autocorrelation on the `(n1, n2)` lag grid; lag `(0, 0)` is 1.
    pub gamma: Image,
    pub residual_norm_sq: f64,
}

struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Unnormalized 2-D transform in place.
    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (row_fft, col_fft) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row_fft.process(buf);
        let mut column = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = buf[r * self.cols + c];
            }
            col_fft.process(&mut column);
            for r in 0..self.rows {
                buf[r * self.cols + c] = column[r];
            }
        }
    }

    /// `a ⋆ b` from their spectra: inverse transform of `conj(A)·B`.
    fn correlate_spectra(&self, fa: &[Complex64], fb: &[Complex64]) -> Vec<f64> {
        let mut prod: Vec<Complex64> = fa.iter().zip(fb).map(|(a, b)| a.conj() * b).collect();
        self.transform(&mut prod, true);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        prod.iter().map(|c| c.re * scale).collect()
    }
}

/// `(a ⋆ b)[j1, j2] = Σ a[k1, k2] · b[(j1 + k1) mod n1, (j2 + k2) mod n2]`.
pub fn circular_xcorr(a: &Image, b: &Image) -> Result<Image> {
    a.ensure_same_shape(b)?;
    let fft = Fft2::new(a.rows(), a.cols());
    let out = fft.correlate_spectra(&fft.forward(a.data()), &fft.forward(b.data()));
    Ok(Image::from_raw(a.rows(), a.cols(), out))
}

fn check_residual(r: &Image) -> Result<f64> {
    let s = dot(r.data(), r.data());
    if !(s >= 1e-300 * r.len() as f64) {
        return Err(Error::ZeroResidual);
    }
    Ok(s)
}

/// Normalized autocorrelation of a nonzero residual.
pub fn autocorrelation(r: &Image) -> Result<Autocorr> {
    let s = check_residual(r)?;
    let fft = Fft2::new(r.rows(), r.cols());
    let fr = fft.forward(r.data());
    let raw = fft.correlate_spectra(&fr, &fr);
    let gamma = Image::from_raw(r.rows(), r.cols(), raw.into_iter().map(|v| v / s).collect());
    Ok(Autocorr { gamma, residual_norm_sq: s })
}

/// Whiteness value only, without the gradient.
pub fn whiteness_value(x_star: &Image, y: &Image) -> Result<f64> {
    x_star.ensure_same_shape(y)?;
    let ac = autocorrelation(&y.sub(x_star))?;
    Ok(0.5 * dot(ac.gamma.data(), ac.gamma.data()))
}

pub fn whiteness_eval(x_star: &Image, y: &Image) -> Result<LossEval> {
    x_star.ensure_same_shape(y)?;
    let r = y.sub(x_star);
    let s = check_residual(&r)?;
    let fft = Fft2::new(r.rows(), r.cols());
    let fr = fft.forward(r.data());
    let auto = fft.correlate_spectra(&fr, &fr);
    let auto_sq = dot(&auto, &auto);
    let value = 0.5 * auto_sq / (s * s);

    let fa = fft.forward(&auto);
    let a_star_r = fft.correlate_spectra(&fa, &fr);
    let c1 = 2.0 / (s * s);
    let c2 = 2.0 * auto_sq / (s * s * s);
    // ∂r/∂x = −I
    let grad: Vec<f64> = a_star_r
        .iter()
        .zip(r.data())
        .map(|(ar, rv)| -(c1 * ar - c2 * rv))
        .collect();
    Ok(LossEval { value, grad_x: Image::from_raw(r.rows(), r.cols(), grad) })
}

/// `Q = ‖x − x_ref‖² / (2n)`.
pub fn mse_eval(x_star: &Image, x_ref: &Image) -> Result<LossEval> {
    x_star.ensure_same_shape(x_ref)?;
    let n = x_star.len() as f64;
    let diff = x_star.sub(x_ref);
    let value = 0.5 * diff.dot(&diff) / n;
    Ok(LossEval { value, grad_x: diff.scale(1.0 / n) })
}
