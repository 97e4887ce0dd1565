mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Compress voxel-grid radiance fields by importance-driven pruning,
/// gradient-guided re-inclusion and 8-bit quantization.
///
/// Defaults (override through a JSON config, then flags):
/// scene sphere, grid 16, 20 views at 48 px, seed 0; training 60 epochs,
/// 4096-ray batches, voxel lr 0.05, dense lr 0.005; compression gamma 0.5,
/// delta 0.5, delta-t 1 dB, voxel scope, 6-connectivity, re-inclusion and
/// quantization on, at most 20 rounds, 8192 snapshot rays.
#[derive(Parser, Debug)]
#[command(name = "revox", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the configured scene and fit a model to it.
    Fit,
    /// Compress a fitted model; writes low/high checkpoints and history.
    Compress { model: PathBuf },
    /// Report PSNR and SSIM of a model against the configured scene.
    Eval { model: PathBuf },
    /// Write the dequantized parameters as a little-endian f32 dump.
    Decode { model: PathBuf },
    /// Render one scene view of a model to PNG (or PPM by extension).
    Render { model: PathBuf, camera: usize },
    /// Print per-layer occupancy, value histograms and sizes.
    Inspect { model: PathBuf },
}

#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for scene, training and compression.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Fraction of kept sites removed per round.
    #[arg(long, global = true, value_name = "F")]
    pub gamma: Option<f64>,
    /// Quantile level of the re-inclusion threshold.
    #[arg(long, global = true, value_name = "F")]
    pub delta: Option<f64>,
    /// Largest tolerated PSNR drop in dB.
    #[arg(long = "delta-t", global = true, value_name = "F")]
    pub delta_t: Option<f64>,
    /// Layers eligible for removal: voxels or all.
    #[arg(long, global = true, value_name = "voxels|all")]
    pub scope: Option<String>,
    /// Disable re-inclusion.
    #[arg(long = "no-reinclude", global = true)]
    pub no_reinclude: bool,
    /// Store full-precision values instead of 8-bit codes.
    #[arg(long = "no-quantize", global = true)]
    pub no_quantize: bool,
    /// Grid neighborhood for re-inclusion: 6 or 26.
    #[arg(long, global = true, value_name = "6|26")]
    pub connectivity: Option<u8>,
    /// Output file or directory.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

/// A problem with the invocation or configuration (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli.command, &cli.overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<UsageError>() {
            Some(usage) => {
                eprintln!("error: {usage}\n");
                eprintln!("Usage: revox [OPTIONS] <fit|compress|eval|decode|render|inspect>");
                eprintln!("Run `revox --help` for details.");
                ExitCode::from(2)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}
