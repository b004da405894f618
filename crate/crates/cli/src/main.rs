//! `gazebin` command-line driver.
//!
//! Exit codes: 0 on success, 1 for invalid input or configuration, 2 for
//! runtime failures (including failed self-checks).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gazebin::data::DatasetKind;
use gazebin::eval::Scope;
use gazebin::report::ReportFormat;

use crate::config::{ConfigError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "gazebin", version, about = "Binned-regression gaze estimation toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for initialization and shuffling
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Regression coefficient of the combined loss
    #[arg(long, global = true)]
    beta: Option<f64>,

    /// mpiigaze, gaze360 or synthetic
    #[arg(long, global = true, value_parser = parse_kind)]
    dataset: Option<DatasetKind>,

    /// all, front180 or frontfacing
    #[arg(long, global = true, value_parser = parse_scope)]
    scope: Option<Scope>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dataset root into the normalized layout under --out
    Preprocess {
        /// Root of the raw or normalized-layout dataset
        #[arg(long)]
        raw: PathBuf,
    },
    /// Train a model and write checkpoints, history and metrics
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on the configured split and scope
    Evaluate {
        /// Defaults to best.ckpt in the run's checkpoint directory
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Leave-one-subject-out cross-validation
    Loso {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Render measured results in --out next to published numbers
    Report {
        #[arg(long, default_value = "text", value_parser = parse_format)]
        format: ReportFormat,
    },
    /// Run the fast invariant suite
    Selfcheck,
}

fn parse_kind(s: &str) -> Result<DatasetKind, String> {
    s.parse().map_err(|e: gazebin::Error| e.to_string())
}

fn parse_scope(s: &str) -> Result<Scope, String> {
    s.parse().map_err(|e: gazebin::Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: gazebin::Error| e.to_string())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<gazebin::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let c = &cli.common;
    let mut overrides = Overrides {
        seed: c.seed,
        beta: c.beta,
        dataset: c.dataset,
        scope: c.scope,
        out: c.out.clone(),
        epochs: None,
    };
    match cli.command {
        Command::Preprocess { raw } => {
            let out = c
                .out
                .clone()
                .ok_or_else(|| ConfigError("preprocess needs --out".into()))?;
            let kind = match c.dataset {
                Some(k) => k,
                None => RunConfig::load(c.config.as_deref(), &overrides)?.dataset.kind,
            };
            commands::cmd_preprocess(&raw, &out, kind)?;
        }
        Command::Train { epochs } => {
            overrides.epochs = epochs;
            commands::cmd_train(&RunConfig::load(c.config.as_deref(), &overrides)?)?;
        }
        Command::Evaluate { checkpoint } => {
            commands::cmd_evaluate(&RunConfig::load(c.config.as_deref(), &overrides)?, checkpoint)?;
        }
        Command::Loso { epochs } => {
            overrides.epochs = epochs;
            commands::cmd_loso(&RunConfig::load(c.config.as_deref(), &overrides)?)?;
        }
        Command::Report { format } => {
            commands::cmd_report(&RunConfig::load(c.config.as_deref(), &overrides)?, format)?;
        }
        Command::Selfcheck => return Ok(commands::cmd_selfcheck(c.seed)),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: self-check failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
