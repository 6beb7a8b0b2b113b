use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use whitemap::calibration::{
    aggregate, calibration_plan, run_job, CalibrationSettings, CALIBRATION_BUDGET, CALIBRATION_CROP,
};
use whitemap::NoiseKind;

use crate::common::{dataset_files, ensure_parent, image_id, load_cropped, positive_f64, thread_pool};

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Directory of clean images (optionally listed in `manifest.txt`).
    pub dataset_dir: PathBuf,
    #[arg(long, value_parser = positive_f64, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
    pub sigmas: Vec<f64>,
    /// One seed, or one seed per σ.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Outer iterations per run.
    #[arg(long, default_value_t = CALIBRATION_BUDGET)]
    pub budget: usize,
    /// Center-crop size.
    #[arg(long, default_value_t = CALIBRATION_CROP)]
    pub crop: usize,
    /// Use the images at full size.
    #[arg(long)]
    pub no_crop: bool,
    #[arg(long, default_value = "gaussian")]
    pub noise: NoiseKind,
    #[arg(long, default_value = "threshold.json")]
    pub out: PathBuf,
    /// Worker threads [default: all cores].
    #[arg(long, env = "WHITEMAP_THREADS")]
    pub threads: Option<usize>,
}

pub fn run(args: CalibrateArgs) -> Result<()> {
    let (sigmas, seeds) = (&args.sigmas, &args.seeds);
    let files = dataset_files(&args.dataset_dir)?;
    let crop = (!args.no_crop).then_some(args.crop);
    let ids: Vec<String> = files.iter().map(|f| image_id(f)).collect();
    let images = files.iter().map(|f| load_cropped(f, crop)).collect::<Result<Vec<_>>>()?;
    let settings = CalibrationSettings { budget: args.budget, crop, noise: args.noise, ..Default::default() };
    let jobs = calibration_plan(&ids, sigmas, seeds)?;
    log::info!("calibrating on {} images x {} noise levels", ids.len(), sigmas.len());

    let pool = thread_pool(args.threads)?;
    let outcomes: Vec<_> = pool.install(|| {
        jobs.into_par_iter()
            .map(|job| {
                let res = run_job(&images[job.image_index], &job, &settings);
                match &res {
                    Ok(r) => log::info!(
                        "{} σ={} peak IPSNR {:.3} dB at {} Q={:.4}",
                        r.image_id,
                        r.sigma,
                        r.peak_ipsnr,
                        r.argmax_iter,
                        r.q_white
                    ),
                    Err(e) => log::warn!("{} σ={} failed: {e}", job.image_id, job.sigma),
                }
                (job, res)
            })
            .collect()
    });
    let name = args
        .dataset_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| args.dataset_dir.display().to_string());
    let threshold = aggregate(&name, &ids, sigmas, seeds, &settings, outcomes)?;

    println!("{:<16} {:>6} {:>6} {:>8} {:>10} {:>8}", "image", "sigma", "seed", "argmax", "peak_ipsnr", "Q");
    for r in &threshold.records {
        println!(
            "{:<16} {:>6} {:>6} {:>8} {:>10.3} {:>8.4}",
            r.image_id, r.sigma, r.seed, r.argmax_iter, r.peak_ipsnr, r.q_white
        );
    }
    for f in &threshold.failures {
        println!("{:<16} {:>6} {:>6} failed: {}", f.image_id, f.sigma, f.seed, f.error);
    }
    println!("q_bar = {:.6} over {} runs", threshold.q_bar, threshold.records.len());
    ensure_parent(&args.out)?;
    threshold.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}
