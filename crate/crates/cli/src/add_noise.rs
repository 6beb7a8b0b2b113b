use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde_json::json;
use whitemap::io::{save_image, save_image_field};
use whitemap::noise::RNG_ALGORITHM;
use whitemap::{sample_noise, Image, NoiseKind, NoiseSpec};

use crate::common::{ensure_parent, positive_f64};

#[derive(Args, Debug)]
pub struct AddNoiseArgs {
    /// Clean image (PNG/PGM) or raw field.
    pub input: PathBuf,
    /// Output raw field; a `.json` sidecar is written next to it.
    pub output: PathBuf,
    #[arg(long, default_value = "gaussian")]
    pub kind: NoiseKind,
    /// Noise standard deviation.
    #[arg(long, value_parser = positive_f64)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// 8-bit preview of the noisy image (default: output with `.png`).
    #[arg(long)]
    pub preview: Option<PathBuf>,
    /// Center-crop the input to a square of this size first.
    #[arg(long)]
    pub crop: Option<usize>,
}

pub fn run(args: AddNoiseArgs) -> Result<()> {
    let clean = crate::common::load_cropped(&args.input, args.crop)?;
    let spec = NoiseSpec { kind: args.kind, sigma: args.sigma, seed: args.seed };
    let noise = sample_noise(clean.len(), &spec)?;
    let max_abs = noise.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let data: Vec<f64> = clean.data().iter().zip(&noise).map(|(a, b)| a + b).collect();
    let noisy = Image::new(clean.rows(), clean.cols(), data)?;

    let meta = json!({
        "source": args.input.display().to_string(),
        "noise": args.kind,
        "sigma": args.sigma,
        "seed": args.seed,
        "rng": RNG_ALGORITHM,
        "max_abs_noise": max_abs,
        "support": spec.support(),
        "crop": args.crop,
    });
    ensure_parent(&args.output)?;
    save_image_field(&args.output, &noisy, "noisy-image", "intensities, unclipped", meta)?;
    let preview = args.preview.unwrap_or_else(|| args.output.with_extension("png"));
    save_image(&noisy, &preview)?;
    log::info!(
        "wrote {} ({}x{}, max |noise| {max_abs:.4}) and preview {}",
        args.output.display(),
        noisy.rows(),
        noisy.cols(),
        preview.display()
    );
    Ok(())
}
