mod commands;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use afmkit::afm::KernelShape;

pub const THREADS_ENV: &str = "AFMKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "afmkit", version, about = "Virtual AFM rendering, datasets and reconstruction metrics")]
pub struct Cli {
    /// Print human-readable tables instead of JSON lines.
    #[arg(long, global = true)]
    pub pretty: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render multi-view virtual AFM height maps of one structure.
    Render(RenderArgs),
    /// Generate a dataset from a JSON-lines manifest.
    Dataset(DatasetArgs),
    /// Score a predicted mesh against ground truth (CD, HD, F-score).
    Eval3d(Eval3dArgs),
    /// Extract a triangle mesh from a density grid.
    ExtractMesh(ExtractArgs),
    /// Score image pairs (MSE, PSNR, SSIM, optional external perceptual score).
    Eval2d(Eval2dArgs),
    /// Height and roughness statistics of height maps.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KernelArg {
    Spherical,
    Disk,
}

impl From<KernelArg> for KernelShape {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Spherical => KernelShape::Spherical,
            KernelArg::Disk => KernelShape::FlatDisk,
        }
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be a positive number, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be ≥ 0, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn at_least_one(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["mesh", "pdb"])))]
pub struct RenderArgs {
    /// Triangle mesh (OBJ).
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Protein structure (PDB); converted to a molecular surface first.
    #[arg(long)]
    pub pdb: Option<PathBuf>,
    /// nm per OBJ unit.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub scale_nm_per_unit: f64,
    #[arg(long, default_value_t = 6, value_parser = at_least_one)]
    pub views: usize,
    /// Target lateral pixel size in nm.
    #[arg(long, default_value_t = 1.5625, value_parser = positive)]
    pub step_nm: f64,
    #[arg(long, default_value_t = 1.5, value_parser = non_negative)]
    pub tip_radius_nm: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = KernelArg::Spherical)]
    pub kernel: KernelArg,
    /// Draw view directions uniformly over the sphere.
    #[arg(long)]
    pub area_uniform: bool,
    #[arg(long, default_value_t = afmkit::pdb::DEFAULT_PROBE_NM, value_parser = non_negative)]
    pub probe_nm: f64,
    #[arg(long, default_value_t = afmkit::pdb::DEFAULT_VOXEL_NM, value_parser = positive)]
    pub voxel_nm: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6, value_parser = at_least_one)]
    pub views: usize,
    #[arg(long, default_value_t = 1.5625, value_parser = positive)]
    pub step_nm: f64,
    #[arg(long, default_value_t = 1.5, value_parser = non_negative)]
    pub tip_radius_nm: f64,
    #[arg(long, default_value_t = 80.0, value_parser = non_negative)]
    pub min_plddt: f64,
    /// Worker threads (capped by AFMKIT_THREADS); defaults to all cores.
    #[arg(long, value_parser = at_least_one)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = KernelArg::Spherical)]
    pub kernel: KernelArg,
    #[arg(long)]
    pub area_uniform: bool,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("inputs").required(true).args(["pred", "batch"])))]
pub struct Eval3dArgs {
    /// Predicted mesh (OBJ).
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    /// Ground-truth mesh (OBJ).
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    /// File of `<pred.obj> <gt.obj>` lines; produces a table.
    #[arg(long, conflicts_with_all = ["pred", "gt"])]
    pub batch: Option<PathBuf>,
    /// nm per OBJ unit of predicted meshes.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub pred_scale: f64,
    /// nm per OBJ unit of ground-truth meshes.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub gt_scale: f64,
    #[arg(long, default_value_t = 10_000, value_parser = at_least_one)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32, value_parser = at_least_one)]
    pub restarts: usize,
    /// Skip rigid alignment.
    #[arg(long)]
    pub no_align: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Grid payload (`.f32`), sidecar (`.json`) or their shared stem.
    #[arg(long)]
    pub grid: PathBuf,
    /// Iso level; defaults to 0.5 only for grids marked occupancy-like.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// March the raw field at the threshold (true) or threshold to occupancy first (false).
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub direct_iso: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Eval2dArgs {
    /// File of `<image_a> <image_b> [pair_id]` lines.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Shell command printing one number; `{a}` and `{b}` become the image paths.
    #[arg(long)]
    pub external_perceptual_cmd: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Height maps (`.hgt` with sidecar).
    #[arg(long, required = true, num_args = 1..)]
    pub heightmap: Vec<PathBuf>,
    /// Pixels above this height count as foreground.
    #[arg(long, default_value_t = afmkit::eval2d::DEFAULT_FOREGROUND_THRESHOLD_NM, value_parser = non_negative)]
    pub foreground_nm: f64,
    /// Second group of maps; adds a Welch t-test on foreground heights.
    #[arg(long, num_args = 1..)]
    pub compare_to: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(afmkit::Error),
}

impl From<afmkit::Error> for CliError {
    fn from(e: afmkit::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    let result = thread_cap().and_then(|cap| match cap {
        Some(n) => afmkit::par::with_threads(n, || commands::run(&cli, Some(n))),
        None => commands::run(&cli, None),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
