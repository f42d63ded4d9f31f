use std::path::PathBuf;
use std::process::ExitCode;

use agmmn_cli::{run, Experiment, RunConfig};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

/// Train and evaluate moment-matching copula generators.
#[derive(Parser)]
#[command(name = "agmmn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator and write a checkpoint with its loss history.
    Train(Common),
    /// Draw samples from a trained generator.
    Sample(Common),
    /// Run a risk-functional convergence study.
    Estimate(Common),
    /// Score a trained generator against data.
    Evaluate(Common),
    /// Count Sobol' points in the upper corner hypercube across dimensions.
    SobolStudy(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed; overrides `seed` in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 uses all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn execute(experiment: Experiment, args: &Common) -> Result<()> {
    #[cfg(feature = "parallel")]
    if args.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .context("no output directory: pass --out or set output_dir")?;
    let manifest = run(experiment, &cfg, &out)?;
    println!("{}", serde_json::to_string(&manifest.summary)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (experiment, args) = match &cli.command {
        Command::Train(a) => (Experiment::Train, a),
        Command::Sample(a) => (Experiment::Sample, a),
        Command::Estimate(a) => (Experiment::Estimate, a),
        Command::Evaluate(a) => (Experiment::Evaluate, a),
        Command::SobolStudy(a) => (Experiment::SobolStudy, a),
    };
    match execute(experiment, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({
                "error": {
                    "experiment": experiment.name(),
                    "message": format!("{e:#}"),
                }
            });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
