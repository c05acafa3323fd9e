use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use hideseek::pipeline::{self, ExperimentConfig, RunManifest, Stage, OUTPUT_ENV};

#[derive(Parser)]
#[command(
    name = "hideseek",
    version,
    about = "Hide-and-seek lesion segmentation on synthetic vertebra phantoms"
)]
struct Cli {
    /// TOML experiment config; built-in easy-regime defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, env = OUTPUT_ENV)]
    out: Option<PathBuf>,
    /// Worker threads for per-sample work (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom dataset.
    Generate,
    /// Fit the latent models and the classifier.
    Train,
    /// Segment the test set with the method and the enabled baselines.
    Segment,
    /// Score segmentations against ground truth.
    Evaluate,
    /// Reconstruction, delta-score and projection ablations.
    Ablate,
    /// Write color overlays of every segmentation.
    Render,
    /// All stages in order.
    RunAll,
    /// Print the resolved config as TOML.
    PrintConfig,
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(cfg: &ExperimentConfig, manifest: &RunManifest) {
    for s in &manifest.stages {
        println!(
            "{:<9} {:>8.2}s  {} files",
            s.stage.as_str(),
            s.seconds,
            s.artifacts.len()
        );
    }
    println!(
        "config {}  output {}{}",
        &manifest.config_hash[..12],
        cfg.output_dir.display(),
        if manifest.partial { "  (partial)" } else { "" }
    );
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = resolve_config(&cli)?;

    let stage = match cli.command {
        Command::PrintConfig => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        Command::RunAll => {
            let manifest = pipeline::run_all(&cfg)?;
            report(&cfg, &manifest);
            return Ok(());
        }
        Command::Generate => Stage::Generate,
        Command::Train => Stage::Train,
        Command::Segment => Stage::Segment,
        Command::Evaluate => Stage::Evaluate,
        Command::Ablate => Stage::Ablate,
        Command::Render => Stage::Render,
    };
    let manifest = pipeline::run_stage(&cfg, stage)?;
    report(&cfg, &manifest);
    Ok(())
}
