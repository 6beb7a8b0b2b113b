//! `whitemap`: noise synthesis, bilevel denoising, threshold calibration and
//! the four-method benchmark grid.

mod add_noise;
mod benchmark;
mod calibrate;
mod common;
mod config;
mod denoise;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "whitemap", version, about = "Weighted-TV denoising with bilevel-learned regularization maps")]
struct Cli {
    /// Write 0 in every timing column so repeated runs give identical files.
    #[arg(long, global = true)]
    deterministic: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Add seeded Gaussian or uniform noise to an image.
    AddNoise(add_noise::AddNoiseArgs),
    /// Denoise one image, learning λ by the bilevel loop.
    Denoise(denoise::DenoiseArgs),
    /// Estimate the whiteness stopping threshold on clean images.
    Calibrate(calibrate::CalibrateArgs),
    /// Run the method × σ grid on test images.
    Benchmark(benchmark::BenchmarkArgs),
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::AddNoise(a) => add_noise::run(a),
        Command::Denoise(a) => denoise::run(a, cli.deterministic),
        Command::Calibrate(a) => calibrate::run(a),
        Command::Benchmark(a) => benchmark::run(a, cli.deterministic),
    }
}
