//! The `tignn` command line: data generation, training, evaluation, offline
//! rendering and the interactive session server.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tignn_core::Error;

pub use commands::run;

#[derive(Clone, Debug, Parser)]
#[command(name = "tignn", version, about = "Learned viscoelastic solid simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Default, Args)]
pub struct Common {
    /// Pipeline config, scene file (serve) or the manifest of an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in configuration: beam-desk, beam-paper, two-beam-scene, bunny-desk, toy-overfit.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Overrides the data and training seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Subcommand)]
pub enum Command {
    /// Simulate the load cases with the finite element oracle.
    Datagen {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a model to a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Roll out every case and write box-plot statistics of the relative errors.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, required_unless_present = "truth")]
        checkpoint: Option<PathBuf>,
        /// Score the ground truth against itself instead of a model.
        #[arg(long)]
        truth: bool,
    },
    /// Render a rollout to PPM frames.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Mesh and load cases; without it the configured mesh is rendered unloaded.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Load case index into the dataset.
        #[arg(long, requires = "dataset")]
        case: Option<usize>,
    },
    /// Run the interactive session over WebSocket, or replay a recorded script.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Checkpoint for every body when the config is a pipeline preset.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Replay an event script offline and write the frame stream.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Record incoming messages to this script on shutdown.
        #[arg(long, conflicts_with = "replay")]
        record: Option<PathBuf>,
        #[arg(long)]
        max_ticks: Option<u64>,
    },
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::InCase { source, .. } => exit_code(source),
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}
