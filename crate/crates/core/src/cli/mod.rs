//! Command-line entry point: one binary with a subcommand per pipeline step.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::info;

use crate::error::{Error, Result};
use crate::util::write_atomic;

pub use commands::{
    agents_backend, analyst_backend, cmd_evaluate, cmd_extract, cmd_route, cmd_sweep, cmd_train, load_splits,
    ChatBackend, EvaluateSummary, ExtractSummary, Splits, Stage1Backend, TrainSummary, WeightFile, BASELINE_NAME,
    REMOTE_SCORER_NAME,
};
pub use config::{AgentsConfig, AnalystConfig, DataConfig, ModelsConfig, Pathway, PipelineConfig, Stage1Config, MOCK_ENDPOINT};

#[derive(Debug, Parser)]
#[command(name = "riskcascade", version, about = "Two-stage cascaded suicide-risk classifier")]
pub struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "riskcascade.toml")]
    pub config: PathBuf,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `parallelism`.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Overrides `pathway`.
    #[arg(long, global = true, value_enum)]
    pub pathway: Option<Pathway>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Analyze every configured post and write feature matrices.
    Extract,
    /// Train the baseline and roster models, then fit ensemble weights.
    Train,
    /// Run Stage 1 only and report how many posts it would accept.
    Route,
    /// Run the full cascade on the test sets and write reports.
    Evaluate,
    /// Grid-search the Stage-1 accept band on the validation split.
    SweepThresholds,
}

/// Loads the config, applies flag overrides, and writes the resolved config
/// into the output directory.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(p) = cli.parallelism {
        cfg.parallelism = p;
    }
    if let Some(p) = cli.pathway {
        cfg.pathway = p;
    }
    cfg.finish()?;
    write_atomic(&cfg.out.join("resolved_config.toml"), cfg.to_toml().as_bytes())?;
    Ok(cfg)
}

/// Runs one command and returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    let cfg = resolve_config(cli)?;
    info!("{:?} with seed {} into {}", cli.command, cfg.seed, cfg.out.display());
    match cli.command {
        Command::Extract => {
            for (name, rows) in cmd_extract(&cfg)?.matrices {
                println!("{name}: {rows} feature rows");
            }
        }
        Command::Train => {
            let s = cmd_train(&cfg)?;
            println!("validation F1 {:.2}% with weights {:?}", 100.0 * s.weights.val_f1, s.weights.weights);
        }
        Command::Route => {
            cmd_route(&cfg)?;
        }
        Command::Evaluate => {
            let s = cmd_evaluate(&cfg)?;
            if s.posts > 0 && s.failed == s.posts {
                eprintln!("every post failed at stage 1");
                return Ok(1);
            }
        }
        Command::SweepThresholds => {
            cmd_sweep(&cfg)?;
        }
    }
    Ok(0)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<i32>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run(&cli)
}
