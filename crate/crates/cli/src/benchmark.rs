use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use whitemap::calibration::load_q_bar;
use whitemap::experiment::{cell_seed, run_cell, Cell, CellResult, GridSettings, Method, EVALUATION_SIGMAS};
use whitemap::noise::RNG_ALGORITHM;
use whitemap::{BilevelTrace, Image, LossKind, NoiseKind};

use crate::common::{ensure_parent, image_id, load_cropped, positive_f64, thread_pool};

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// Clean test images.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
    #[arg(long, value_parser = positive_f64, value_delimiter = ',', default_values_t = EVALUATION_SIGMAS)]
    pub sigmas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "tv-mse,wtv-mse,tv-white,wtv-white")]
    pub methods: Vec<Method>,
    /// Threshold JSON for the whiteness methods.
    #[arg(long)]
    pub threshold_file: Option<PathBuf>,
    /// Whiteness threshold given directly.
    #[arg(long, conflicts_with = "threshold_file")]
    pub threshold: Option<f64>,
    #[arg(long, default_value = "gaussian")]
    pub noise: NoiseKind,
    /// Base seed; each (image, σ) row gets its own realization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Center-crop size (0 keeps full images).
    #[arg(long, default_value_t = 180)]
    pub crop: usize,
    #[arg(long, default_value_t = 3000)]
    pub max_iters: usize,
    /// One row per run.
    #[arg(long, default_value = "benchmark.csv")]
    pub out: PathBuf,
    /// Table with one row per (image, σ) and IPSNR/ISSIM columns per method.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Directory for per-run traces and a gnuplot script plotting them.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Worker threads [default: all cores].
    #[arg(long, env = "WHITEMAP_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Row {
    image: String,
    sigma: f64,
    method: String,
    noise: String,
    seed: u64,
    status: String,
    ipsnr: Option<f64>,
    issim: Option<f64>,
    q_white: Option<f64>,
    outer_iterations: Option<usize>,
    stop_reason: Option<String>,
    lambda_min: Option<f64>,
    lambda_max: Option<f64>,
    q_bar: Option<f64>,
    rng: &'static str,
    seconds: f64,
}

type Outcome = (Cell, whitemap::Result<(CellResult, BilevelTrace)>, f64);

pub fn run(args: BenchmarkArgs, deterministic: bool) -> Result<()> {
    let q_bar = match (&args.threshold_file, args.threshold) {
        (_, Some(q)) => Some(q),
        (Some(p), None) => Some(load_q_bar(p).with_context(|| format!("reading {}", p.display()))?),
        (None, None) => None,
    };
    if q_bar.is_none() && args.methods.iter().any(|m| m.loss() == LossKind::Whiteness) {
        bail!("whiteness methods need --threshold-file or --threshold");
    }
    let crop = (args.crop > 0).then_some(args.crop);
    let ids: Vec<String> = args.images.iter().map(|p| image_id(p)).collect();
    let images = args.images.iter().map(|p| load_cropped(p, crop)).collect::<Result<Vec<Image>>>()?;
    let settings = GridSettings { q_bar, max_outer_iters: args.max_iters, monitor_ssim: args.traces.is_some() };

    let mut cells = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        for (j, &sigma) in args.sigmas.iter().enumerate() {
            for &method in &args.methods {
                let seed = cell_seed(args.seed, i, j);
                cells.push((i, Cell { image_id: id.clone(), sigma, method, noise: args.noise, seed }));
            }
        }
    }
    let pool = thread_pool(args.threads)?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        cells
            .into_par_iter()
            .map(|(i, cell)| {
                let start = Instant::now();
                let res = run_cell(&images[i], &cell, &settings);
                let secs = if deterministic { 0.0 } else { start.elapsed().as_secs_f64() };
                match &res {
                    Ok((r, _)) => log::info!(
                        "{} σ={} {}: IPSNR {:.3} ISSIM {:.4} ({} its, {:?})",
                        cell.image_id,
                        cell.sigma,
                        cell.method,
                        r.ipsnr,
                        r.issim,
                        r.outer_iterations,
                        r.stop_reason
                    ),
                    Err(e) => log::warn!("{} σ={} {} failed: {e}", cell.image_id, cell.sigma, cell.method),
                }
                (cell, res, secs)
            })
            .collect()
    });

    write_rows(&args.out, &outcomes, q_bar)?;
    if let Some(path) = &args.table {
        write_table(path, &outcomes, &args.methods)?;
    }
    if let Some(dir) = &args.traces {
        write_traces(dir, &outcomes, deterministic)?;
    }
    let failed = outcomes.iter().filter(|(_, r, _)| r.is_err()).count();
    if failed > 0 {
        bail!("{failed} of {} runs failed; see the status column of {}", outcomes.len(), args.out.display());
    }
    Ok(())
}

fn noise_name(kind: NoiseKind) -> &'static str {
    match kind {
        NoiseKind::Gaussian => "gaussian",
        NoiseKind::Uniform => "uniform",
    }
}

fn write_rows(path: &Path, outcomes: &[Outcome], q_bar: Option<f64>) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for (cell, res, secs) in outcomes {
        let ok = res.as_ref().ok().map(|(r, _)| r);
        let status = match res {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("error: {e}"),
        };
        w.serialize(Row {
            image: cell.image_id.clone(),
            sigma: cell.sigma,
            method: cell.method.to_string(),
            noise: noise_name(cell.noise).into(),
            seed: cell.seed,
            status,
            ipsnr: ok.map(|r| r.ipsnr),
            issim: ok.map(|r| r.issim),
            q_white: ok.map(|r| r.q_white),
            outer_iterations: ok.map(|r| r.outer_iterations),
            stop_reason: ok.map(|r| format!("{:?}", r.stop_reason)),
            lambda_min: ok.map(|r| r.lambda_min),
            lambda_max: ok.map(|r| r.lambda_max),
            q_bar: if cell.method.loss() == LossKind::Whiteness { q_bar } else { None },
            rng: RNG_ALGORITHM,
            seconds: *secs,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn write_table(path: &Path, outcomes: &[Outcome], methods: &[Method]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["image".to_string(), "sigma".to_string()];
    for m in methods {
        header.push(format!("{m}_ipsnr"));
        header.push(format!("{m}_issim"));
    }
    w.write_record(&header)?;
    let mut keys: Vec<(String, f64)> = Vec::new();
    for (cell, _, _) in outcomes {
        if !keys.iter().any(|(i, s)| *i == cell.image_id && *s == cell.sigma) {
            keys.push((cell.image_id.clone(), cell.sigma));
        }
    }
    for (image, sigma) in keys {
        let mut rec = vec![image.clone(), sigma.to_string()];
        for m in methods {
            let hit = outcomes.iter().find(|(c, _, _)| c.image_id == image && c.sigma == sigma && c.method == *m);
            match hit.and_then(|(_, r, _)| r.as_ref().ok()) {
                Some((r, _)) => {
                    rec.push(format!("{:.3}", r.ipsnr));
                    rec.push(format!("{:.3}", r.issim));
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_traces(dir: &Path, outcomes: &[Outcome], deterministic: bool) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut script = String::from(
        "# gnuplot script: Q, IPSNR and ISSIM along the outer iterations\n\
         set datafile separator ','\nset key outside right\nset xlabel 'iteration'\n\
         set terminal pngcairo size 1500,420\n",
    );
    for (cell, res, _) in outcomes {
        let Ok((_, trace)) = res else { continue };
        let stem = format!("{}_s{}_{}", cell.image_id, cell.sigma, cell.method);
        let file = format!("{stem}.csv");
        let f = File::create(dir.join(&file))?;
        trace.write_csv(BufWriter::new(f), !deterministic)?;
        writeln!(
            script,
            "set output '{stem}.png'\nset multiplot layout 1,3 title '{stem}'\n\
             set title 'Q'\nplot '{file}' using 1:2 skip 1 with lines notitle\n\
             set title 'IPSNR'\nplot '{file}' using 1:7 skip 1 with lines notitle\n\
             set title 'ISSIM'\nplot '{file}' using 1:8 skip 1 with lines notitle\nunset multiplot"
        )?;
    }
    std::fs::write(dir.join("plot.gp"), script)?;
    Ok(())
}
