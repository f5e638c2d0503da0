//! Command-line surface: dataset validation, the two training stages,
//! rendering, editing, surface extraction, and evaluation.
//!
//! Every command works against a run directory (`--out`) with a fixed
//! layout: `config.toml` (the echoed effective configuration), `ckpt/`,
//! `renders/`, `mesh/`, `metrics.json`, `losses.csv`. Commands are
//! idempotent for a fixed seed and configuration.

mod commands;
mod rundir;

use anyhow::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "sparseshape", version, about = "SDF-based multi-object reconstruction from sparse views")]
struct Cli {
    /// Training/rendering configuration (TOML). Falls back to
    /// `<out>/config.toml`, then to desk-scale defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base RNG seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory for outputs.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset: manifest invariants, cameras, meshes.
    Validate {
        /// Dataset directory containing manifest.json.
        dataset: PathBuf,
    },
    /// Stage one: fit the geometry network to the prior meshes.
    Pretrain,
    /// Stage two: joint photometric training.
    Train {
        /// Train on N uniformly strided views (all views by default).
        #[arg(long)]
        views: Option<usize>,
        /// Drop the geometry prior: random sphere init, no SDF loss.
        #[arg(long)]
        no_prior: bool,
        /// Drop the ray-consistency term.
        #[arg(long)]
        no_rayloss: bool,
        /// Drop the saturation term.
        #[arg(long)]
        no_saturation: bool,
    },
    /// Render one view from the latest checkpoint.
    Render {
        /// Camera id from the dataset.
        #[arg(long, conflicts_with = "pose")]
        camera: Option<String>,
        /// JSON file holding one camera record.
        #[arg(long)]
        pose: Option<PathBuf>,
        /// Output resolution, e.g. 128x128 (camera native by default).
        #[arg(long)]
        res: Option<String>,
        /// Comma list of buffers: rgb,normal,depth.
        #[arg(long, default_value = "rgb")]
        outputs: String,
    },
    /// Extract the zero level set as an OBJ mesh.
    Extract {
        /// Marching-cubes grid resolution per axis.
        #[arg(long, default_value_t = 128)]
        grid: usize,
    },
    /// Render test views and compute PSNR/SSIM (+ Chamfer with a GT mesh).
    Eval,
    /// Render with per-object edits applied.
    Edit {
        /// Omit an object: --omit ID (repeatable).
        #[arg(long)]
        omit: Vec<String>,
        /// Translate: --translate ID:x,y,z (repeatable).
        #[arg(long)]
        translate: Vec<String>,
        /// Rotate: --rotate ID:axis,deg with axis x|y|z (repeatable).
        #[arg(long)]
        rotate: Vec<String>,
        /// Scale: --scale ID:k (repeatable).
        #[arg(long)]
        scale: Vec<String>,
        #[arg(long, conflicts_with = "pose")]
        camera: Option<String>,
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long)]
        res: Option<String>,
        #[arg(long, default_value = "rgb")]
        outputs: String,
    },
}

fn main() -> Result<()> {
    sparseshape_core::init_thread_pool();
    let cli = Cli::parse();
    match &cli.command {
        Command::Validate { dataset } => commands::validate(dataset),
        Command::Pretrain => commands::pretrain(&cli.config, cli.seed, &cli.out),
        Command::Train { views, no_prior, no_rayloss, no_saturation } => commands::train(
            &cli.config,
            cli.seed,
            &cli.out,
            *views,
            *no_prior,
            *no_rayloss,
            *no_saturation,
        ),
        Command::Render { camera, pose, res, outputs } => {
            commands::render(&cli.config, cli.seed, &cli.out, camera, pose, res, outputs, &[])
        }
        Command::Extract { grid } => commands::extract(&cli.config, cli.seed, &cli.out, *grid),
        Command::Eval => commands::eval(&cli.config, cli.seed, &cli.out),
        Command::Edit { omit, translate, rotate, scale, camera, pose, res, outputs } => {
            let edits = commands::parse_edits(omit, translate, rotate, scale)?;
            commands::render(&cli.config, cli.seed, &cli.out, camera, pose, res, outputs, &edits)
        }
    }
}
