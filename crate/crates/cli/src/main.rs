use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use limbnet_core::synth::SynthSpec;

mod cache;
mod commands;
mod config;
mod error;

use commands::Context;
use config::ExperimentConfig;
use error::{CliError, CliResult};

/// Limb-oriented person identification and soft-biometrics experiments.
#[derive(Parser)]
#[command(name = "limbnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for compatibility; every run is single-threaded and seeded.
    #[arg(long)]
    deterministic: bool,
    /// Number of repeated runs with seeds seed, seed+1, ...
    #[arg(long)]
    repeat: Option<usize>,
    /// Skip channel normalization (the non-normalized arm).
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Segment, split and normalize a dataset into the window cache.
    Prepare(Common),
    /// Train and test the configured task.
    Train(Common),
    /// Score a saved checkpoint on the test split.
    Eval(Common),
    /// Leave-one-subject-out attribute evaluation.
    Loocv(Common),
    /// Identification accuracy per activity.
    Ioa(Common),
    /// Relevance map of one test window.
    Explain(Common),
    /// Convert a summary table between JSON and CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a synthetic dataset.
    Synth {
        /// Generator settings (TOML); defaults when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn context(c: Common) -> CliResult<Context> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(r) = c.repeat {
        cfg.repeat = r;
    }
    if c.deterministic {
        cfg.deterministic = true;
    }
    if c.no_normalize {
        cfg.prepare.normalize = false;
    }
    Context::new(cfg, c.out)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Prepare(c) => commands::cmd_prepare(&context(c)?),
        Command::Train(c) => commands::cmd_train(&context(c)?),
        Command::Eval(c) => commands::cmd_eval(&context(c)?),
        Command::Loocv(c) => commands::cmd_loocv(&context(c)?),
        Command::Ioa(c) => commands::cmd_ioa(&context(c)?),
        Command::Explain(c) => commands::cmd_explain(&context(c)?),
        Command::Report { input, output } => commands::cmd_report(&input, &output),
        Command::Synth { spec, seed, out } => {
            let mut s = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
                    toml::from_str::<SynthSpec>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
                }
                None => SynthSpec::default(),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            commands::cmd_synth(&s, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.detail());
            ExitCode::FAILURE
        }
    }
}
