//! Command-line entry point: argument parsing, config resolution, exit codes.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Overrides, RunConfig, RUN_CONFIG_FORMAT_VERSION};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "HIVT5_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hivt5", version, about = "Multi-page document question answering with a hierarchical transformer")]
pub struct Cli {
    /// Run config file (flat TOML, format_version first).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a raw synthetic corpus.
    GenData,
    /// Cut long documents, drop ambiguous questions, split by source.
    Build,
    /// Layout-aware denoising pretraining.
    Pretrain {
        /// Continue from this stage's checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Two-page answer and page training.
    Train {
        #[arg(long)]
        resume: bool,
    },
    /// Full-document finetuning with a frozen encoder.
    Finetune {
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint under one evaluation setup.
    Eval,
    /// Summarise all evaluation reports of the output directory.
    Report,
}

/// Exit code for an error: 2 for bad input, configuration or stage order,
/// 3 for failures while running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::Config(_) | Error::Parse { .. } | Error::Stage(_) | Error::Checkpoint(_) => EXIT_VALIDATION,
        Error::Shape(_) | Error::Numeric(_) | Error::Index(_) | Error::Contract(_) | Error::Io { .. } => EXIT_RUNTIME,
    }
}

/// File config (or defaults) with flag overrides applied, validated.
pub fn resolve_config(cli: &Cli) -> crate::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

pub fn execute(cli: &Cli) -> crate::Result<()> {
    let config = resolve_config(cli)?;
    match cli.command {
        Command::GenData => commands::gen_data(&config, cli.force).map(drop),
        Command::Build => commands::build(&config, cli.force).map(drop),
        Command::Pretrain { resume } => commands::pretrain(&config, resume, cli.force).map(drop),
        Command::Train { resume } => commands::train(&config, resume, cli.force).map(drop),
        Command::Finetune { resume } => commands::finetune(&config, resume, cli.force).map(drop),
        Command::Eval => commands::eval(&config, cli.force).map(drop),
        Command::Report => commands::report(&config).map(drop),
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
