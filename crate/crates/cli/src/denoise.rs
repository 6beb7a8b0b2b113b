use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde_json::json;
use whitemap::calibration::load_q_bar;
use whitemap::io::{save_field, save_image, FieldHeader};
use whitemap::noise::RNG_ALGORITHM;
use whitemap::{
    gd_bil_observed, BilevelConfig, Image, LossKind, ParamMap, ParamMode, QualityMonitor,
    StepScaling, StopReason,
};

use crate::common::{ensure_parent, load_cropped};
use crate::config::{pick, KeyValues, DENOISE_KEYS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Reg {
    /// Per-pixel weights.
    Wtv,
    /// One global weight.
    Tv,
}

impl std::str::FromStr for Reg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Reg as ValueEnum>::from_str(s, true)
    }
}

impl Reg {
    pub fn mode(self) -> ParamMode {
        match self {
            Reg::Wtv => ParamMode::PerPixel,
            Reg::Tv => ParamMode::Scalar,
        }
    }
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    /// Noisy image (PNG/PGM) or raw field.
    pub input: PathBuf,
    /// Settings file with `key = value` lines (flag names without dashes).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Upper loss: `white` or `mse` [default: white].
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Regularizer [default: wtv].
    #[arg(long)]
    pub reg: Option<Reg>,
    /// Huber knee [default: 0.1 for wtv, 0.01 for tv].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Outer step size [default: 1000 for white, 100 for mse].
    #[arg(long)]
    pub eta: Option<f64>,
    /// Hypergradient scaling before the step: `pixel-balanced` or `plain`.
    #[arg(long)]
    pub step_scaling: Option<StepScaling>,
    /// Initial value of every β entry [default: 1].
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub lambda_cap: Option<f64>,
    /// Lower-level tolerance [default: 1e-6].
    #[arg(long)]
    pub tol: Option<f64>,
    /// Outer tolerance on ‖Δβ‖ [default: 1e-6].
    #[arg(long)]
    pub outer_eps: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Threshold JSON produced by `calibrate`.
    #[arg(long)]
    pub threshold_file: Option<PathBuf>,
    /// Whiteness threshold given directly.
    #[arg(long, conflicts_with = "threshold_file")]
    pub threshold: Option<f64>,
    /// Run the whiteness loss without a threshold.
    #[arg(long)]
    pub no_early_stop: bool,
    /// Clean image; required for `--loss mse`, used for IPSNR/ISSIM otherwise.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Center-crop input (and reference) to a square of this size.
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub out_image: Option<PathBuf>,
    /// λ̂ map as raw field.
    #[arg(long)]
    pub out_lambda: Option<PathBuf>,
    /// Preview of ln λ̂, clipped below at −10.
    #[arg(long)]
    pub out_lambda_preview: Option<PathBuf>,
    #[arg(long)]
    pub out_trace: Option<PathBuf>,
    /// Directory for β snapshots (raw fields) taken every `--snapshot-stride` iterations.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub snapshot_stride: usize,
}

/// Lower clip of ln λ in previews.
pub const LOG_LAMBDA_FLOOR: f64 = -10.0;

struct Resolved {
    cfg: BilevelConfig,
    beta0: f64,
    crop: Option<usize>,
}

fn resolve(args: &DenoiseArgs) -> Result<Resolved> {
    let file = match &args.config {
        Some(p) => KeyValues::load(p, DENOISE_KEYS)?,
        None => KeyValues::default(),
    };
    let loss = pick(args.loss, &file, "loss", LossKind::Whiteness)?;
    let reg = pick(args.reg, &file, "reg", Reg::Wtv)?;
    let mut cfg = BilevelConfig::new(loss, reg.mode());
    cfg.epsilon = pick(args.epsilon, &file, "epsilon", cfg.epsilon)?;
    cfg.eta = pick(args.eta, &file, "eta", cfg.eta)?;
    cfg.step_scaling = pick(args.step_scaling, &file, "step-scaling", cfg.step_scaling)?;
    cfg.lambda_cap = pick(args.lambda_cap, &file, "lambda-cap", cfg.lambda_cap)?;
    cfg.lower.tol = pick(args.tol, &file, "tol", cfg.lower.tol)?;
    cfg.eps_outer = pick(args.outer_eps, &file, "outer-eps", cfg.eps_outer)?;
    cfg.max_outer_iters = pick(args.max_iters, &file, "max-iters", cfg.max_outer_iters)?;
    let beta0 = pick(args.beta0, &file, "beta0", 1.0)?;
    let crop = match args.crop {
        Some(c) => Some(c),
        None => file.get("crop")?,
    };

    let no_early_stop = args.no_early_stop || file.flag("no-early-stop")?;
    let threshold_file = args.threshold_file.clone().or(file.get::<PathBuf>("threshold-file")?);
    let threshold = match (args.threshold, &threshold_file) {
        (Some(q), _) => Some(q),
        (None, Some(p)) => Some(load_q_bar(p).with_context(|| format!("reading {}", p.display()))?),
        (None, None) => file.get("threshold")?,
    };
    if loss == LossKind::Whiteness {
        match (threshold, no_early_stop) {
            (_, true) => cfg.stop_threshold = None,
            (Some(q), false) => cfg.stop_threshold = Some(q),
            (None, false) => {
                bail!("--loss white needs --threshold-file (or --threshold), or --no-early-stop")
            }
        }
    }
    cfg.validate()?;
    Ok(Resolved { cfg, beta0, crop })
}

pub fn run(args: DenoiseArgs, deterministic: bool) -> Result<()> {
    let Resolved { cfg, beta0, crop } = resolve(&args)?;
    let y = load_cropped(&args.input, crop)?;
    let reference = args.reference.as_deref().map(|p| load_cropped(p, crop)).transpose()?;
    if cfg.loss == LossKind::Mse && reference.is_none() {
        bail!("--loss mse needs --reference");
    }
    let p0 = ParamMap::constant(cfg.mode, y.len(), beta0);

    if let Some(dir) = &args.snapshots {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let stride = args.snapshot_stride.max(1);
    let mut snapshot_err = None;
    let out = gd_bil_observed(&y, p0, &cfg, reference.as_ref(), |v| {
        let Some(dir) = &args.snapshots else { return };
        if v.iter % stride != 0 || snapshot_err.is_some() {
            return;
        }
        let header = FieldHeader::new(y.rows(), y.cols(), "beta", "ln lambda")
            .with_metadata(json!({ "iter": v.iter, "q": v.record.q }));
        let path = dir.join(format!("beta_{:05}.f64", v.iter));
        if let Err(e) = save_field(&path, &v.params.beta_field(y.len()), &header) {
            snapshot_err = Some(e);
        }
    })?;
    if let Some(e) = snapshot_err {
        return Err(e).context("writing β snapshot");
    }

    let meta = json!({
        "input": args.input.display().to_string(),
        "loss": cfg.loss,
        "mode": cfg.mode,
        "config": cfg,
        "beta0": beta0,
        "stop_reason": out.stop_reason,
        "outer_iterations": out.trace.len(),
        "rng": RNG_ALGORITHM,
    });
    if let Some(path) = &args.out_image {
        ensure_parent(path)?;
        save_image(&out.x_hat, path)?;
    }
    if let Some(path) = &args.out_lambda {
        ensure_parent(path)?;
        let header = FieldHeader::new(y.rows(), y.cols(), "lambda", "regularization weight")
            .with_metadata(meta.clone());
        save_field(path, &out.params.lambda_field(y.len()), &header)?;
    }
    if let Some(path) = &args.out_lambda_preview {
        ensure_parent(path)?;
        save_image(&log_lambda_preview(&out.params, y.rows(), y.cols(), cfg.lambda_cap)?, path)?;
    }
    if let Some(path) = &args.out_trace {
        ensure_parent(path)?;
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        out.trace.write_csv(BufWriter::new(f), !deterministic)?;
    }

    let monitor = reference.as_ref().map(|r| QualityMonitor::new(&y, r)).transpose()?;
    let summary = json!({
        "stop_reason": out.stop_reason,
        "outer_iterations": out.trace.len(),
        "q_final": out.trace.records.last().map(|r| r.q),
        "crossing_q": out.crossing_q,
        "lambda_min": out.params.lambda_min(),
        "lambda_max": out.params.lambda_max(),
        "ipsnr": monitor.as_ref().map(|m| m.ipsnr(&out.x_hat)).transpose()?,
        "issim": monitor.as_ref().map(|m| m.issim(&out.x_hat)).transpose()?,
    });
    println!("{summary}");
    if out.stop_reason == StopReason::NonFinite {
        bail!("outer iteration produced non-finite values; last finite iterate was written");
    }
    Ok(())
}

/// ln λ mapped from `[−10, ln cap]` to `[0, 1]`.
pub fn log_lambda_preview(p: &ParamMap, rows: usize, cols: usize, cap: f64) -> Result<Image> {
    let hi = cap.ln();
    let span = (hi - LOG_LAMBDA_FLOOR).max(f64::EPSILON);
    let data = p
        .beta_field(rows * cols)
        .into_iter()
        .map(|b| (b.clamp(LOG_LAMBDA_FLOOR, hi) - LOG_LAMBDA_FLOOR) / span)
        .collect();
    Ok(Image::new(rows, cols, data)?)
}
