use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use omni_cli::config::{Config, Overrides};
use omni_cli::stages::{run_stage, Stage};

/// Chain-of-thought corpus curation pipeline.
#[derive(Debug, Parser)]
#[command(name = "omni", version, about)]
struct Cli {
    /// Stage to run (`pipeline` chains all stages with checkpoints).
    #[arg(value_enum)]
    stage: Stage,

    /// Pipeline config file (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Override the sampling seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the sampler capacity score.
    #[arg(long = "mu-cd")]
    mu_cd: Option<u8>,

    /// Override the sampler mixing weight.
    #[arg(long)]
    beta: Option<f64>,

    /// Override the stage worker count.
    #[arg(long)]
    workers: Option<usize>,

    /// Abort on malformed lines and invariant violations instead of
    /// skip-and-report.
    #[arg(long)]
    strict: bool,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("omni=info,omni_core=warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        mu_cd: cli.mu_cd,
        beta: cli.beta,
        workers: cli.workers,
        strict: cli.strict,
    };
    let config = match Config::load(&cli.config, overrides) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };

    match run_stage(cli.stage, config).await {
        Ok(reports) => {
            for report in &reports {
                println!("{}: ok ({} ms)", report.stage, report.timing_ms);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
