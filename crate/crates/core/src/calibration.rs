//! Offline estimation of the whiteness early-stopping threshold.
//!
//! For every (clean image, σ) pair the unsupervised per-pixel bilevel loop
//! runs without early stopping for a fixed budget while IPSNR is monitored
//! against the clean image. The whiteness loss at the IPSNR peak is recorded
//! and the threshold is the mean over all runs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bilevel::{default_beta0, gd_bil, BilevelConfig};
use crate::energy::ParamMode;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::LossKind;
use crate::noise::{add_noise, NoiseKind, NoiseSpec, RNG_ALGORITHM};

/// Noise levels of the calibration protocol.
pub const CALIBRATION_SIGMAS: [f64; 3] = [0.01, 0.05, 0.1];
/// Default iteration budget per run.
pub const CALIBRATION_BUDGET: usize = 3000;
/// Images are center-cropped to this size.
pub const CALIBRATION_CROP: usize = 180;
/// Largest tolerated fraction of failed runs.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub image_id: String,
    pub sigma: f64,
    pub seed: u64,
    /// Outer iteration with the highest IPSNR.
    pub argmax_iter: usize,
    pub peak_ipsnr: f64,
    pub q_white: f64,
    pub total_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub image_id: String,
    pub sigma: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub q_bar: f64,
    pub dataset: String,
    pub sigmas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub records: Vec<CalibrationRecord>,
    #[serde(default)]
    pub failures: Vec<FailedRun>,
    pub config_hash: String,
    /// Crop size applied to the dataset images, if any.
    pub crop: Option<usize>,
    pub rng: String,
}

impl Threshold {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Reads only the `q_bar` field of a threshold file.
pub fn load_q_bar(path: impl AsRef<Path>) -> Result<f64> {
    let value: serde_json::Value = serde_json::from_slice(&std::fs::read(path.as_ref())?)?;
    value
        .get("q_bar")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::Corrupt { path: path.as_ref().into(), reason: "missing numeric q_bar".into() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub budget: usize,
    pub crop: Option<usize>,
    pub noise: NoiseKind,
    /// Bilevel settings; loss, mode, budget and threshold are overridden.
    pub bilevel: BilevelConfig,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            budget: CALIBRATION_BUDGET,
            crop: Some(CALIBRATION_CROP),
            noise: NoiseKind::Gaussian,
            bilevel: BilevelConfig::new(LossKind::Whiteness, ParamMode::PerPixel),
        }
    }
}

impl CalibrationSettings {
    fn run_config(&self) -> BilevelConfig {
        let mut cfg = self.bilevel;
        cfg.loss = LossKind::Whiteness;
        cfg.mode = ParamMode::PerPixel;
        cfg.stop_threshold = None;
        cfg.max_outer_iters = self.budget;
        cfg.monitor_ssim = false;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationJob {
    pub image_index: usize,
    pub sigma_index: usize,
    pub image_id: String,
    pub sigma: f64,
    pub seed: u64,
}

/// Seed of run `(image, sigma)`. With one seed per σ the image index is
/// added to it; with a single seed the run's position in the image-major
/// grid is added.
pub fn run_seed(seeds: &[u64], n_sigmas: usize, image_index: usize, sigma_index: usize) -> Result<u64> {
    match seeds.len() {
        1 => Ok(seeds[0].wrapping_add((image_index * n_sigmas + sigma_index) as u64)),
        k if k == n_sigmas => Ok(seeds[sigma_index].wrapping_add(image_index as u64)),
        k => Err(Error::InvalidParameter(format!(
            "expected 1 or {n_sigmas} seeds, got {k}"
        ))),
    }
}

/// All runs of the protocol, image-major.
pub fn calibration_plan(image_ids: &[String], sigmas: &[f64], seeds: &[u64]) -> Result<Vec<CalibrationJob>> {
    if image_ids.is_empty() {
        return Err(Error::InvalidParameter("calibration dataset is empty".into()));
    }
    if sigmas.is_empty() {
        return Err(Error::InvalidParameter("no noise levels given".into()));
    }
    let mut jobs = Vec::with_capacity(image_ids.len() * sigmas.len());
    for (i, id) in image_ids.iter().enumerate() {
        for (j, &sigma) in sigmas.iter().enumerate() {
            jobs.push(CalibrationJob {
                image_index: i,
                sigma_index: j,
                image_id: id.clone(),
                sigma,
                seed: run_seed(seeds, sigmas.len(), i, j)?,
            });
        }
    }
    Ok(jobs)
}

/// Runs one calibration job on its clean image.
pub fn run_job(clean: &Image, job: &CalibrationJob, settings: &CalibrationSettings) -> Result<CalibrationRecord> {
    let clean = match settings.crop {
        Some(c) => clean.center_crop(c, c),
        None => clean.clone(),
    };
    let spec = NoiseSpec { kind: settings.noise, sigma: job.sigma, seed: job.seed };
    let noisy = add_noise(&clean, &spec)?;
    let cfg = settings.run_config();
    let out = gd_bil(&noisy, default_beta0(ParamMode::PerPixel, clean.len()), &cfg, Some(&clean))?;
    let peak = out.trace.peak_ipsnr().ok_or(Error::NonFinite("IPSNR trace"))?;
    let rec = &out.trace.records[peak];
    Ok(CalibrationRecord {
        image_id: job.image_id.clone(),
        sigma: job.sigma,
        seed: job.seed,
        argmax_iter: rec.iter,
        peak_ipsnr: rec.ipsnr.unwrap_or(f64::NAN),
        q_white: rec.q,
        total_iters: out.trace.len(),
    })
}

/// Stable hash of everything that determines the calibration result.
pub fn config_hash(dataset: &[String], sigmas: &[f64], seeds: &[u64], settings: &CalibrationSettings) -> String {
    let payload = serde_json::json!({
        "dataset": dataset,
        "sigmas": sigmas,
        "seeds": seeds,
        "settings": settings,
        "rng": RNG_ALGORITHM,
    });
    let digest = Sha256::digest(payload.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Combines per-run outcomes (in any order) into a threshold. Records are
/// sorted by (image, σ) before averaging.
pub fn aggregate(
    dataset: &str,
    image_ids: &[String],
    sigmas: &[f64],
    seeds: &[u64],
    settings: &CalibrationSettings,
    outcomes: Vec<(CalibrationJob, Result<CalibrationRecord>)>,
) -> Result<Threshold> {
    let mut outcomes = outcomes;
    outcomes.sort_by_key(|(job, _)| (job.image_index, job.sigma_index));
    let total = outcomes.len();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (job, res) in outcomes {
        match res {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(FailedRun {
                image_id: job.image_id,
                sigma: job.sigma,
                seed: job.seed,
                error: e.to_string(),
            }),
        }
    }
    if records.is_empty() || failures.len() as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::CalibrationRefused { failed: failures.len(), total });
    }
    if !failures.is_empty() {
        log::warn!("{} of {total} calibration runs failed and were excluded", failures.len());
    }
    let q_bar = records.iter().map(|r| r.q_white).sum::<f64>() / records.len() as f64;
    Ok(Threshold {
        q_bar,
        dataset: dataset.to_string(),
        sigmas: sigmas.to_vec(),
        seeds: seeds.to_vec(),
        records,
        failures,
        config_hash: config_hash(image_ids, sigmas, seeds, settings),
        crop: settings.crop,
        rng: RNG_ALGORITHM.to_string(),
    })
}

/// Sequential calibration over `(id, clean image)` pairs.
pub fn calibrate_threshold(
    dataset_name: &str,
    dataset: &[(String, Image)],
    sigmas: &[f64],
    seeds: &[u64],
    settings: &CalibrationSettings,
) -> Result<Threshold> {
    let ids: Vec<String> = dataset.iter().map(|(id, _)| id.clone()).collect();
    let jobs = calibration_plan(&ids, sigmas, seeds)?;
    let outcomes = jobs
        .into_iter()
        .map(|job| {
            let res = run_job(&dataset[job.image_index].1, &job, settings);
            (job, res)
        })
        .collect();
    aggregate(dataset_name, &ids, sigmas, seeds, settings, outcomes)
}
