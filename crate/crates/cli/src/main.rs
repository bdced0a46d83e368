use clap::{Parser, Subcommand};
use sero_core::pipeline::{run_pipeline, run_stage, Config, PipelineError, Stage};
use std::path::PathBuf;
use std::process::ExitCode;

/// Seroprevalence estimation pipeline.
#[derive(Parser)]
#[command(name = "sero", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long, short)]
    config: PathBuf,
    /// Override `mcmc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Days between trend dates.
    #[arg(long)]
    stride: Option<u64>,
    /// Repair non-monotone cumulative counts instead of rejecting them.
    #[arg(long)]
    allow_monotonic_repair: bool,
    /// Draw vaccination seroprevalence afresh inside the infection sampler.
    #[arg(long)]
    joint: bool,
    /// Skip SVG charts.
    #[arg(long)]
    no_svg: bool,
}

#[derive(Subcommand)]
enum Command {
    Ingest(Common),
    FitAllocation(Common),
    FitCompletion(Common),
    FitEfficacy(Common),
    FitInfection(Common),
    Predict(Common),
    Aggregate(Common),
    Report(Common),
    /// Every stage in order.
    RunAll(Common),
}

fn load(c: &Common) -> Result<Config, PipelineError> {
    let mut config = Config::load(&c.config)?;
    if let Some(seed) = c.seed {
        config.mcmc.seed = seed;
    }
    if let Some(out) = &c.out {
        config.out_dir = out.clone();
    }
    if let Some(stride) = c.stride {
        config.stride = stride.max(1) as i64;
    }
    config.allow_monotonic_repair |= c.allow_monotonic_repair;
    config.joint |= c.joint;
    config.svg &= !c.no_svg;
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (stage, common) = match &cli.command {
        Command::Ingest(c) => (Some(Stage::Ingest), c),
        Command::FitAllocation(c) => (Some(Stage::FitAllocation), c),
        Command::FitCompletion(c) => (Some(Stage::FitCompletion), c),
        Command::FitEfficacy(c) => (Some(Stage::FitEfficacy), c),
        Command::FitInfection(c) => (Some(Stage::FitInfection), c),
        Command::Predict(c) => (Some(Stage::Predict), c),
        Command::Aggregate(c) => (Some(Stage::Aggregate), c),
        Command::Report(c) => (Some(Stage::Report), c),
        Command::RunAll(c) => (None, c),
    };
    let result = load(common).and_then(|config| match stage {
        Some(s) => run_stage(s, &config),
        None => run_pipeline(&config),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ PipelineError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
