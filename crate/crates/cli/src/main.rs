//! `tomomar`: phantom generation, simulation, reconstruction, MAR and
//! evaluation as composable subcommands over TOMO files.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tomomar::{ErrorCategory, TomoError};

#[derive(Debug, Parser)]
#[command(name = "tomomar", version, about = "Fan-beam CT simulation and metal artifact reduction")]
pub struct Cli {
    /// Worker threads; defaults to all available cores. Output bytes do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize the ellipse phantom (and optional metal mask) of a scan config.
    Phantom(PhantomArgs),
    /// Simulate a metal-corrupted scan and its LI baseline.
    Simulate(SimulateArgs),
    /// Fan-beam filtered back-projection of a sinogram.
    Fbp(FbpArgs),
    /// Linear interpolation across the metal trace.
    Li(LiArgs),
    /// Model-based metal artifact reduction.
    Mar(MarArgs),
    /// PSNR and SSIM against a reference image.
    Metrics(MetricsArgs),
    /// Adjoint dot tests and finite-difference checks of the operators.
    Gradcheck(GradcheckArgs),
    /// Window an image into an 8-bit grayscale PNG.
    ExportPng(ExportPngArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Scan config JSON; omitted means the built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the metal mask (0/1) described by the config.
    #[arg(long)]
    pub metal_out: Option<PathBuf>,
    /// Override the image side from the config.
    #[arg(long)]
    pub side: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub phantom: PathBuf,
    /// Metal mask (0/1); omitted means no metal.
    #[arg(long)]
    pub metal: Option<PathBuf>,
    /// Spectrum CSV (energy_keV,eta,mu_metal_per_mm); omitted means the built-in 120 kVp table.
    #[arg(long)]
    pub spectrum: Option<PathBuf>,
    #[arg(long)]
    pub geom: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip Poisson noise.
    #[arg(long)]
    pub no_noise: bool,
    /// Metal path-length supersampling per pixel axis.
    #[arg(long, default_value_t = tomomar::simulate::DEFAULT_SUPERSAMPLE)]
    pub supersample: usize,
    #[arg(long)]
    pub outdir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FbpArgs {
    #[arg(long)]
    pub sino: PathBuf,
    #[arg(long)]
    pub geom: Option<PathBuf>,
    /// Override the calibrated reconstruction gain.
    #[arg(long)]
    pub gain: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LiArgs {
    #[arg(long)]
    pub sino: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MarMode {
    Iterative,
    TraceRefine,
}

#[derive(Debug, Args)]
pub struct MarArgs {
    #[arg(long, value_enum)]
    pub mode: MarMode,
    /// Solver settings JSON; omitted means defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Measured sinogram; its trace entries are LI-filled before use.
    #[arg(long)]
    pub sino: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub geom: Option<PathBuf>,
    /// Starting image for `iterative`; defaults to the FBP of the LI sinogram.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Target image for `trace-refine`.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// Per-iteration objective log (CSV).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Metal mask (0/1) whose pixels are left out.
    #[arg(long)]
    pub exclude_metal: Option<PathBuf>,
    /// Peak for PSNR/SSIM; defaults to the reference's dynamic range.
    #[arg(long)]
    pub peak: Option<f64>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Run the dot tests in f64 (default f32).
    #[arg(long)]
    pub f64: bool,
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    #[arg(long, default_value_t = 20)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExportPngArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub center: f64,
    #[arg(long)]
    pub width: f64,
    /// Convert from attenuation (1/mm) to HU before windowing.
    #[arg(long)]
    pub hu: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub const EXIT_USAGE: u8 = 1;

fn exit_code(e: &TomoError) -> u8 {
    match e.category() {
        ErrorCategory::Io => 2,
        ErrorCategory::Validation => 3,
        ErrorCategory::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
