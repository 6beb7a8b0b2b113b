//! The four-method comparison grid: scalar TV or per-pixel WTV regularization,
//! each tuned with the supervised MSE loss or the unsupervised whiteness loss.

use serde::{Deserialize, Serialize};

use crate::bilevel::{default_beta0, gd_bil, BilevelConfig, BilevelOutcome, BilevelTrace, StopReason};
use crate::energy::ParamMode;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{whiteness_value, LossKind};
use crate::metrics::{ipsnr, issim};
use crate::noise::{add_noise, NoiseKind, NoiseSpec};

/// Noise levels of the evaluation grid, disjoint from the calibration set.
pub const EVALUATION_SIGMAS: [f64; 3] = [0.03, 0.06, 0.09];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "tv-mse")]
    TvMse,
    #[serde(rename = "wtv-mse")]
    WtvMse,
    #[serde(rename = "tv-white")]
    TvWhite,
    #[serde(rename = "wtv-white")]
    WtvWhite,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::TvMse, Method::WtvMse, Method::TvWhite, Method::WtvWhite];

    pub fn loss(self) -> LossKind {
        match self {
            Method::TvMse | Method::WtvMse => LossKind::Mse,
            Method::TvWhite | Method::WtvWhite => LossKind::Whiteness,
        }
    }

    pub fn mode(self) -> ParamMode {
        match self {
            Method::TvMse | Method::TvWhite => ParamMode::Scalar,
            Method::WtvMse | Method::WtvWhite => ParamMode::PerPixel,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::TvMse => "tv-mse",
            Method::WtvMse => "wtv-mse",
            Method::TvWhite => "tv-white",
            Method::WtvWhite => "wtv-white",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// One cell of the comparison grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub image_id: String,
    pub sigma: f64,
    pub method: Method,
    pub noise: NoiseKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub ipsnr: f64,
    pub issim: f64,
    /// Whiteness of the returned residual.
    pub q_white: f64,
    pub outer_iterations: usize,
    pub stop_reason: StopReason,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Settings shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    /// Early-stopping threshold for the whiteness methods.
    pub q_bar: Option<f64>,
    pub max_outer_iters: usize,
    /// Record ISSIM in the traces (PSNR is always recorded).
    pub monitor_ssim: bool,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { q_bar: None, max_outer_iters: 3000, monitor_ssim: false }
    }
}

impl GridSettings {
    pub fn config(&self, method: Method) -> BilevelConfig {
        let mut cfg = BilevelConfig::new(method.loss(), method.mode());
        cfg.max_outer_iters = self.max_outer_iters;
        cfg.stop_threshold = self.q_bar;
        cfg.monitor_ssim = self.monitor_ssim;
        cfg
    }
}

/// Denoises one noisy realization with one method and scores it against the clean image.
pub fn run_method(
    clean: &Image,
    noisy: &Image,
    method: Method,
    settings: &GridSettings,
) -> Result<(BilevelOutcome, f64, f64)> {
    if method.loss() == LossKind::Whiteness && settings.q_bar.is_none() {
        return Err(Error::InvalidParameter(format!("{method} needs a whiteness threshold")));
    }
    let cfg = settings.config(method);
    let out = gd_bil(noisy, default_beta0(method.mode(), clean.len()), &cfg, Some(clean))?;
    let gain_psnr = ipsnr(&out.x_hat, noisy, clean)?;
    let gain_ssim = issim(&out.x_hat, noisy, clean)?;
    Ok((out, gain_psnr, gain_ssim))
}

/// Runs one cell and returns its scores together with the outer trace.
pub fn run_cell(clean: &Image, cell: &Cell, settings: &GridSettings) -> Result<(CellResult, BilevelTrace)> {
    let noisy = add_noise(clean, &NoiseSpec { kind: cell.noise, sigma: cell.sigma, seed: cell.seed })?;
    let (out, gain_psnr, gain_ssim) = run_method(clean, &noisy, cell.method, settings)?;
    let result = CellResult {
        cell: cell.clone(),
        ipsnr: gain_psnr,
        issim: gain_ssim,
        q_white: whiteness_value(&out.x_hat, &noisy)?,
        outer_iterations: out.trace.len(),
        stop_reason: out.stop_reason,
        lambda_min: out.params.lambda_min(),
        lambda_max: out.params.lambda_max(),
    };
    Ok((result, out.trace))
}

/// Seed for `(image, σ)`: all four methods of a row share one realization.
pub fn cell_seed(base: u64, image_index: usize, sigma_index: usize) -> u64 {
    base.wrapping_add(1000 * image_index as u64 + sigma_index as u64)
}
