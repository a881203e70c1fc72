//! `skymatch` — pipeline driver for the cross-match engine.
//!
//! Every stage reads its inputs from files and writes canonical,
//! sorted artifacts, so re-running a stage is byte-identical and the
//! `all` chain equals running the stages one by one.

mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};

use pipeline::{Pipeline, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "lower")]
pub enum Stage {
    Gen,
    Ingest,
    Hits,
    Misses,
    Classify,
    Fof,
    Bundles,
    Pivot,
    All,
    Verify,
}

#[derive(Parser)]
#[command(
    name = "skymatch",
    version,
    about = "Cross-match point-source catalogs from multiple survey runs"
)]
struct Cli {
    /// Pipeline configuration (JSON)
    #[arg(long)]
    config: PathBuf,

    /// Stage to run (defaults to the config's stage, then to `all`)
    #[arg(long, value_enum)]
    stage: Option<Stage>,

    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads for the spatial join (defaults to all cores)
    #[arg(long)]
    threads: Option<usize>,

    /// Generator seed (overrides the scenario)
    #[arg(long)]
    seed: Option<u64>,

    /// Classification distance, e.g. `fixed:1.0` or `scaled:3`
    #[arg(long)]
    distance: Option<String>,

    /// Zone height in arcseconds (defaults to the largest run-pair
    /// distance, floored at 30)
    #[arg(long)]
    zone_height: Option<f64>,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let config = PipelineConfig::load(&cli.config)
        .with_context(|| format!("config {}", cli.config.display()))?;
    let stage = cli.stage.or(config.stage_from_config()?).unwrap_or(Stage::All);
    let pipeline = Pipeline::new(
        config,
        cli.out,
        cli.seed,
        cli.distance.as_deref(),
        cli.zone_height,
    )?;
    if let Some(n) = cli.threads.or(pipeline.threads()) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool")?;
    }
    match stage {
        Stage::Gen => pipeline.gen()?,
        Stage::Ingest => pipeline.ingest()?,
        Stage::Hits => pipeline.hits()?,
        Stage::Misses => pipeline.misses()?,
        Stage::Classify => pipeline.classify()?,
        Stage::Fof => pipeline.fof()?,
        Stage::Bundles => pipeline.bundles()?,
        Stage::Pivot => pipeline.pivot()?,
        Stage::All => pipeline.all()?,
        Stage::Verify => pipeline.verify()?,
    }
    Ok(())
}
