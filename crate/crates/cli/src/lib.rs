//! Command-line pipeline: sweep generation, two-stage frame reduction,
//! latent forecasting and rendering. All filesystem access lives here.

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod manifest;
pub mod models;
pub mod render;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::Context;
pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "spinodal", version, about = "Phase-field datasets, latent reduction and forecasting")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// key = value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override one key, e.g. --set grid.nx=64 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Include wall-clock timings in reports
    #[arg(long, global = true)]
    pub timings: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a parameter sweep into a dataset directory
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all logical cores)
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Train the stage-1 (frames) or stage-2 (codes) autoencoder
    TrainAe {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage-1 codes of every frame
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit scaler + PCA on stage-1 codes
    FitPca {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage-2 latents of stage-1 codes (PCA or autoencoder model)
    Transform {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the latent forecaster
    TrainSeq {
        #[arg(long)]
        latent: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict k latent frames per sample
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        latent: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode latent frames back to images
    Decode {
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: PathBuf,
        #[arg(long)]
        latent: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruction error of the two-stage pipeline on frames
    Evaluate {
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report path
        #[arg(long)]
        out: PathBuf,
        /// Optional [S,T] container of per-frame MSE
        #[arg(long)]
        per_frame: Option<PathBuf>,
    },
    /// Write frames as PGM (1 channel) or PPM (3 channels)
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        /// Only this sample of a [S,T,ny,nx] container
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Print every configuration key with its effective value
    ShowConfig,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let ctx = Context {
        config: RunConfig::load(cli.global.config.as_deref(), &cli.global.overrides)?,
        timings: cli.global.timings,
    };
    match cli.command {
        Command::Generate { out, jobs } => {
            let summary = commands::generate(&ctx, &out, jobs)?;
            log::info!("dataset dims {:?}", summary.dims);
            if summary.failed > 0 {
                return Err(CliError::PartialGeneration {
                    failed: summary.failed,
                    total: summary.total,
                });
            }
        }
        Command::TrainAe { stage, data, out } => {
            commands::train_ae(&ctx, stage, &data, &out)?;
        }
        Command::Encode { model, data, out } => {
            commands::encode(&ctx, &model, &data, &out)?;
        }
        Command::FitPca { data, out } => {
            commands::fit_pca(&ctx, &data, &out)?;
        }
        Command::Transform { model, data, out } => {
            commands::transform(&ctx, &model, &data, &out)?;
        }
        Command::TrainSeq { latent, manifest, out } => {
            commands::train_seq(&ctx, &latent, &manifest, &out)?;
        }
        Command::Predict {
            model,
            latent,
            manifest,
            out,
        } => {
            commands::predict(&ctx, &model, &latent, &manifest, &out)?;
        }
        Command::Decode {
            stage1,
            stage2,
            latent,
            out,
        } => {
            commands::decode(&ctx, &stage1, &stage2, &latent, &out)?;
        }
        Command::Evaluate {
            stage1,
            stage2,
            data,
            out,
            per_frame,
        } => {
            commands::evaluate(&ctx, &stage1, &stage2, &data, &out, per_frame.as_deref())?;
        }
        Command::Render {
            data,
            out,
            channels,
            sample,
        } => {
            let written = commands::render(&data, &out, channels, sample)?;
            log::info!("wrote {} images", written.len());
        }
        Command::ShowConfig => print!("{}", commands::show_config(&ctx.config)?),
    }
    Ok(())
}
