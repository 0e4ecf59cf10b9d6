//! Library behind the `hypervd` binary: argument parsing, run configuration
//! and the subcommands.

pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use hypervd::data_io::SynthConfig;
use hypervd::ModelConfig;

use crate::commands::{Axis, GradCheckArgs};
use crate::config::{seed_override, RunConfig};
use crate::error::{CliError, Context};

#[derive(Debug, Parser)]
#[command(name = "hypervd", version, about = "Hyperbolic audio-visual violence detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset, its manifests and a ready-to-train config.
    GenSynth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Generator seed; also written as the run seed of config.toml.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of training videos.
        #[arg(long, default_value_t = 64)]
        n_train: usize,
        /// Number of test videos (with frame labels).
        #[arg(long, default_value_t = 32)]
        n_test: usize,
        /// Minimum snippets per video.
        #[arg(long, default_value_t = 8)]
        t_min: usize,
        /// Maximum snippets per video.
        #[arg(long, default_value_t = 32)]
        t_max: usize,
        /// Visual feature width.
        #[arg(long, default_value_t = 16)]
        visual_dim: usize,
        /// Audio feature width.
        #[arg(long, default_value_t = 8)]
        audio_dim: usize,
        /// Shift of violent snippets along the hidden direction.
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
    },
    /// Train a model; writes checkpoint.hvdm, final.hvdm and history.csv.
    Train {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to [output] dir of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every video of a manifest; writes per-video frame score files.
    Score {
        /// Model file written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest of the videos to score.
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for `<id>.scores` and `<id>.curve.csv` files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Frame-level AP of previously written score files.
    Eval {
        /// Directory holding `<id>.scores` files.
        #[arg(long)]
        scores: PathBuf,
        /// Manifest with frame-label paths.
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every variant along one axis and print an AP table.
    Ablate {
        /// Run configuration (TOML); needs both manifests.
        #[arg(long)]
        config: PathBuf,
        /// fusion (five strategies), branch (hfsg, htrg, both) or geometry
        /// (euclidean, hyperbolic).
        #[arg(long)]
        axis: Axis,
        /// Also write the table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        /// Model section to check; the small built-in config when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Videos in the check batch.
        #[arg(long, default_value_t = 4)]
        videos: usize,
        /// Snippets per video.
        #[arg(long, default_value_t = 5)]
        snippets: usize,
    },
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::GenSynth {
            out: dir,
            seed,
            n_train,
            n_test,
            t_min,
            t_max,
            visual_dim,
            audio_dim,
            separation,
        } => {
            let synth = SynthConfig {
                seed,
                n_train,
                n_test,
                t_min,
                t_max,
                visual_dim,
                audio_dim,
                separation,
            };
            commands::gen_synth(&synth, &dir, out)
        }
        Command::Train { config, out: dir } => {
            let cfg = RunConfig::load(&config)?;
            commands::train_cmd(&cfg, dir.as_deref(), out).map(|_| ())
        }
        Command::Score {
            checkpoint,
            manifest,
            out: dir,
        } => commands::score(&checkpoint, &manifest, &dir, out),
        Command::Eval {
            scores,
            manifest,
            out: file,
        } => {
            let text = commands::eval_cmd(&scores, &manifest)?.to_text();
            if let Some(file) = file {
                std::fs::write(&file, &text).ctx("eval")?;
            }
            write!(out, "{text}").ctx("cli")
        }
        Command::Ablate { config, axis, out: file } => {
            let cfg = RunConfig::load(&config)?;
            let table = commands::ablation_csv(&commands::ablate(&cfg, axis)?);
            if let Some(file) = file {
                std::fs::write(&file, &table).ctx("ablate")?;
            }
            write!(out, "{table}").ctx("cli")
        }
        Command::Gradcheck {
            config,
            tolerance,
            step,
            videos,
            snippets,
        } => {
            let (model, seed) = match config {
                Some(path) => {
                    let cfg = RunConfig::load(&path)?;
                    (cfg.model, cfg.seed)
                }
                None => (ModelConfig::toy(), seed_override()?.unwrap_or(0)),
            };
            let args = GradCheckArgs {
                tolerance,
                step,
                videos,
                snippets,
            };
            commands::gradcheck(&model, seed, &args, out)
        }
    }
}
