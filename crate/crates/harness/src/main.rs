use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fastcs::config::{parse_config, Experiment, RunConfig};
use fastcs::manifest::Manifest;
use fastcs::{experiments, workers};
use std::path::PathBuf;
use std::process::ExitCode;

/// Fast constrained sampling from diffusion priors.
#[derive(Parser)]
#[command(name = "fastcs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unconstrained DDIM samples from the configured denoiser
    Sample(Common),
    /// Constrained sampling against a measurement
    Invert(Common),
    /// Two-layer decomposition of an image
    Layers(Common),
    /// Jacobian symmetry probe
    ProbeJacobian(Common),
    /// Newton versus backprop guidance on a constrained patch
    CompareDirections(Common),
    /// Train an MLP denoiser on grid textures
    Train(Common),
    /// Run the acceptance criteria
    Acceptance(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config or a previous run's manifest.toml
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Command {
    fn split(self) -> (Experiment, Common) {
        match self {
            Command::Sample(c) => (Experiment::Sample, c),
            Command::Invert(c) => (Experiment::Invert, c),
            Command::Layers(c) => (Experiment::Layers, c),
            Command::ProbeJacobian(c) => (Experiment::JacobianProbe, c),
            Command::CompareDirections(c) => (Experiment::DirectionCompare, c),
            Command::Train(c) => (Experiment::TrainDenoiser, c),
            Command::Acceptance(c) => (Experiment::Acceptance, c),
        }
    }
}

fn resolve(experiment: Experiment, args: &Common) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_config(&text, Some(experiment)).with_context(|| format!("config {}", path.display()))?
        }
        None => RunConfig::defaults(experiment),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(experiment: Experiment, args: Common) -> Result<bool> {
    let cfg = resolve(experiment, &args)?;
    print!("# resolved config\n{}\n", cfg.to_toml());
    let pool = workers::worker_pool()?;
    let report = pool.install(|| experiments::run(&cfg, &args.out))?;
    let mut inputs = report.inputs.clone();
    if let Some(c) = &args.config {
        inputs.insert(0, c.clone());
    }
    let manifest = Manifest::collect(&cfg, &inputs, &args.out)?;
    let path = manifest.write(&args.out)?;
    if experiment != Experiment::Acceptance {
        for line in &report.lines {
            println!("{line}");
        }
    }
    for f in &report.failures {
        eprintln!("FAILED: {f}");
    }
    println!("wrote {} files and {}", manifest.outputs.len(), path.display());
    Ok(report.failures.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (experiment, args) = Cli::parse().command.split();
    match run(experiment, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
