use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bayes_fwi::FwiError;
use bayes_fwi_cli::config::ExperimentConfig;
use bayes_fwi_cli::{commands, exit_code};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bayes-fwi", version, about = "Bayesian full-waveform inversion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate clean and noisy data for the true model.
    Forward,
    /// MAP and Laplace approximation per potential on both datasets.
    Invert,
    /// pCN chains per potential.
    Sample,
    /// Stability report between clean- and noisy-data approximations.
    Compare,
    /// Parse and validate the config, print it normalized.
    ValidateConfig,
}

fn run(cli: &Cli) -> Result<(), FwiError> {
    let path = cli.config.as_ref().ok_or_else(|| FwiError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| FwiError::Config(format!("--threads: {e}")))?;
    }
    if let Command::ValidateConfig = cli.command {
        // a closed pipe (e.g. `| head`) is not an error
        let _ = writeln!(std::io::stdout(), "{}", cfg.to_json());
        return Ok(());
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| FwiError::Config("no output directory: pass --out or set output_dir".into()))?;
    let manifest = match cli.command {
        Command::Forward => commands::forward(&cfg, &out)?,
        Command::Invert => commands::invert(&cfg, &out)?,
        Command::Sample => commands::sample(&cfg, &out)?,
        Command::Compare => commands::compare(&cfg, &out)?,
        Command::ValidateConfig => unreachable!(),
    };
    eprintln!("{}: wrote {} files under {}", manifest.command, manifest.files.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
