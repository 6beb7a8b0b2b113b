//! Runs the unsupervised whiteness bilevel loop on one image and prints the
//! trace: `cargo run --release --example trajectory -- <image> <sigma> <iters> [crop]`.

use whitemap::io::load_image;
use whitemap::{add_noise, default_beta0, gd_bil_observed, BilevelConfig, LossKind, NoiseSpec, ParamMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).map(String::as_str).unwrap_or("data/test/00_camera.png");
    let sigma: f64 = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(0.05);
    let iters: usize = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(100);
    let crop: usize = args.get(4).map(|s| s.parse()).transpose()?.unwrap_or(180);
    let loss: LossKind = args.get(5).map(|s| s.parse()).transpose()?.unwrap_or(LossKind::Whiteness);
    let mode = match args.get(6).map(String::as_str) {
        Some("tv") => ParamMode::Scalar,
        _ => ParamMode::PerPixel,
    };

    let clean = load_image(path)?.center_crop(crop, crop);
    let noisy = add_noise(&clean, &NoiseSpec::gaussian(sigma, 0))?;
    let mut cfg = BilevelConfig::new(loss, mode);
    cfg.max_outer_iters = iters;
    if let Some(eta) = args.get(7) {
        cfg.eta = eta.parse()?;
    }
    let beta0 = match args.get(8) {
        Some(b) => whitemap::ParamMap::constant(mode, clean.len(), b.parse()?),
        None => default_beta0(mode, clean.len()),
    };
    let out = gd_bil_observed(&noisy, beta0, &cfg, Some(&clean), |v| {
        let r = v.record;
        println!(
            "{:5} Q={:.5} dβ={:.3e} λ=[{:.2e},{:.2e}] mean={:.3} ipsnr={:.3} issim={:.4} lower={} cg={} t={:.1}s",
            r.iter,
            r.q,
            r.delta_beta,
            r.lambda_min,
            r.lambda_max,
            r.lambda_mean,
            r.ipsnr.unwrap_or(f64::NAN),
            r.issim.unwrap_or(f64::NAN),
            r.lower_iterations,
            r.cg_iterations,
            r.seconds
        );
    })?;
    println!("stopped: {:?}", out.stop_reason);
    if let Ok(prefix) = std::env::var("TRAJ_DUMP") {
        let beta = out.params.beta_field(clean.len());
        let lo = -10.0f64;
        let hi = 5f64.ln();
        let map = whitemap::Image::new(
            clean.rows(),
            clean.cols(),
            beta.iter().map(|b| (b.max(lo) - lo) / (hi - lo)).collect(),
        )?;
        whitemap::io::save_image(&map, format!("{prefix}_beta.png"))?;
        whitemap::io::save_image(&out.x_hat, format!("{prefix}_x.png"))?;
        whitemap::io::save_image(&noisy, format!("{prefix}_y.png"))?;
    }
    Ok(())
}
