#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use recdistill_core::classifier::ClassifierMode;

use config::Config;

const THREADS_VAR: &str = "RECDISTILL_THREADS";

#[derive(Parser)]
#[command(
    name = "recdistill",
    version,
    about = "Rectified score distillation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate prior, rectified and noised densities and category marginals.
    RectifyDemo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run particle distillation (SDS, VSD, USD or CTRL).
    Distill {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify glyph images against front/back/left/right templates.
    Classify {
        /// Directory holding front.pgm, back.pgm, left.pgm and right.pgm.
        templates: PathBuf,
        /// Directory of .pgm inputs; a `<category>_` file prefix marks ground truth.
        inputs: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use only the orientation similarity.
        #[arg(long, conflicts_with = "texture_only")]
        orient_only: bool,
        /// Use only the texture similarity.
        #[arg(long)]
        texture_only: bool,
    },
    /// Entropy, marginal TV and Frechet statistics of saved outputs.
    Metrics {
        #[arg(long)]
        out_dir: PathBuf,
        /// CSV with `p_*` probability columns.
        #[arg(long)]
        probs: Vec<PathBuf>,
        /// `particles.csv` from a distill run; the last snapshot is used.
        #[arg(long)]
        particles: Vec<PathBuf>,
        /// Reference `particles.csv` for the Frechet distance.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Config defining the world model for particle posteriors.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the default templates and a synthetic glyph corpus.
    Glyphs {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        per_category: usize,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_VAR}={raw:?} is not a thread count"))?;
    if n == 0 {
        bail!("{THREADS_VAR} must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::RectifyDemo { config, out_dir } => {
            commands::rectify_demo(&Config::load(&config)?, &out_dir)
        }
        Command::Distill {
            config,
            out_dir,
            seed,
        } => commands::distill(&Config::load(&config)?, seed, &out_dir),
        Command::Classify {
            templates,
            inputs,
            out_dir,
            config,
            orient_only,
            texture_only,
        } => {
            let cfg = match config {
                Some(p) => Config::load(&p)?,
                None => Config::default(),
            };
            let mode = match (orient_only, texture_only) {
                (true, _) => ClassifierMode::OrientOnly,
                (_, true) => ClassifierMode::TextureOnly,
                _ => ClassifierMode::Full,
            };
            commands::classify(&cfg, &templates, &inputs, mode, &out_dir)
        }
        Command::Metrics {
            out_dir,
            probs,
            particles,
            reference,
            config,
        } => {
            let cfg = config.map(|p| Config::load(&p)).transpose()?;
            commands::metrics_cmd(
                cfg.as_ref(),
                &probs,
                &particles,
                reference.as_deref(),
                &out_dir,
            )
        }
        Command::Glyphs {
            out_dir,
            seed,
            per_category,
        } => commands::glyphs(seed, per_category, &out_dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
