//! Image quality metrics: PSNR, SSIM and their improvements over the noisy data.
//!
//! PSNR uses peak value 1. SSIM uses an 11×11 Gaussian window with standard
//! deviation 1.5, `C1 = 0.01²`, `C2 = 0.03²`, and wraps the window
//! periodically at the borders.

use crate::error::Result;
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio in dB. Identical images give `f64::INFINITY`.
pub fn psnr(x: &Image, x_ref: &Image) -> Result<f64> {
    x.ensure_same_shape(x_ref)?;
    let diff = x.sub(x_ref);
    let mse = diff.dot(&diff) / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (k, t) in taps.iter_mut().enumerate() {
        let d = k as f64 - half;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable periodic Gaussian filtering.
fn blur(rows: usize, cols: usize, data: &[f64], taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = SSIM_WINDOW / 2;
    let mut tmp = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let cc = (c + cols * SSIM_WINDOW - half + k) % cols;
                acc += t * data[r * cols + cc];
            }
            tmp[r * cols + c] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let rr = (r + rows * SSIM_WINDOW - half + k) % rows;
                acc += t * tmp[rr * cols + c];
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

/// Mean structural similarity.
pub fn ssim(x: &Image, x_ref: &Image) -> Result<f64> {
    x.ensure_same_shape(x_ref)?;
    let (rows, cols) = x.shape();
    let taps = gaussian_taps();
    let a = x.data();
    let b = x_ref.data();
    let prod = |f: &dyn Fn(usize) -> f64| (0..a.len()).map(f).collect::<Vec<f64>>();
    let mu_a = blur(rows, cols, a, &taps);
    let mu_b = blur(rows, cols, b, &taps);
    let aa = blur(rows, cols, &prod(&|i| a[i] * a[i]), &taps);
    let bb = blur(rows, cols, &prod(&|i| b[i] * b[i]), &taps);
    let ab = blur(rows, cols, &prod(&|i| a[i] * b[i]), &taps);
    let total: f64 = (0..a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .sum();
    Ok(total / a.len() as f64)
}

/// `psnr(x_out, x_ref) − psnr(y, x_ref)`.
pub fn ipsnr(x_out: &Image, y: &Image, x_ref: &Image) -> Result<f64> {
    Ok(psnr(x_out, x_ref)? - psnr(y, x_ref)?)
}

/// `ssim(x_out, x_ref) − ssim(y, x_ref)`.
pub fn issim(x_out: &Image, y: &Image, x_ref: &Image) -> Result<f64> {
    Ok(ssim(x_out, x_ref)? - ssim(y, x_ref)?)
}

/// Precomputed baseline metrics of the noisy data, for monitoring many
/// reconstructions of the same image.
#[derive(Debug, Clone)]
pub struct QualityMonitor {
    reference: Image,
    psnr_data: f64,
    ssim_data: f64,
}

impl QualityMonitor {
    pub fn new(y: &Image, reference: &Image) -> Result<Self> {
        Ok(Self {
            reference: reference.clone(),
            psnr_data: psnr(y, reference)?,
            ssim_data: ssim(y, reference)?,
        })
    }

    pub fn reference(&self) -> &Image {
        &self.reference
    }

    pub fn ipsnr(&self, x: &Image) -> Result<f64> {
        Ok(psnr(x, &self.reference)? - self.psnr_data)
    }

    pub fn issim(&self, x: &Image) -> Result<f64> {
        Ok(ssim(x, &self.reference)? - self.ssim_data)
    }
}
