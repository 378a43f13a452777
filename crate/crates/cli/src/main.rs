//! `pano4d`: the panoramic 4D reconstruction pipeline as file-to-file
//! stages.
//!
//! Exit status is 0 on success, 2 for bad input and 3 for numerical
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "pano4d", version, about = "Panoramic 4D scene reconstruction pipeline")]
struct Cli {
    /// JSON pipeline configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic stage (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut tangent perspective views out of a panorama.
    Project {
        /// Panorama PNG.
        panorama: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align per-view depths and fuse them into one panorama depth.
    AlignSpatial {
        /// Directory holding `cameras.json` and `depths.erpf`.
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map panorama depths into the metric space of reference depths.
    AlignTemporal {
        /// Panorama depth sequence (raw float grid).
        #[arg(long)]
        depths: PathBuf,
        /// Metric perspective depths (raw float grid).
        #[arg(long)]
        metric: PathBuf,
        /// Camera pose file, one entry per frame.
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize one Gaussian set per frame.
    Reconstruct {
        /// Panorama color sequence (raw float grid, 3 channels).
        #[arg(long)]
        rgb: PathBuf,
        /// Aligned panorama depth sequence (raw float grid).
        #[arg(long)]
        depths: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a camera trajectory through a reconstructed scene.
    Render {
        /// Directory of `frame_NNNN.ply` files.
        #[arg(long)]
        scene: PathBuf,
        /// Trajectory JSON.
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-export a Gaussian PLY, optionally dropping transparent Gaussians.
    ExportPly {
        input: PathBuf,
        output: PathBuf,
        /// Opacity threshold of the pruning pass.
        #[arg(long)]
        prune: Option<f64>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl From<pano4d::Error> for CliError {
    fn from(e: pano4d::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Input("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    let cfg = PipelineConfig::load(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Project { panorama, out } => commands::project(&panorama, &out, &cfg),
        Command::AlignSpatial { input, out } => commands::align_spatial(&input, &out, &cfg),
        Command::AlignTemporal {
            depths,
            metric,
            poses,
            out,
        } => commands::align_temporal(&depths, &metric, &poses, &out, &cfg),
        Command::Reconstruct { rgb, depths, poses, out } => commands::reconstruct(&rgb, &depths, &poses, &out, &cfg),
        Command::Render { scene, trajectory, out } => commands::render(&scene, &trajectory, &out, &cfg),
        Command::ExportPly { input, output, prune } => commands::export_ply(&input, &output, prune),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Warn
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Input(m) => eprintln!("error: {m}"),
                CliError::Numerical(m) => eprintln!("numerical failure: {m}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
