//! `ctrm`: instance generation, demonstrations, training, roadmap
//! construction, planning and benchmarking from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

/// Usage errors exit with 2, operational failures with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Op(anyhow::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Op(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Op(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "ctrm", version, about = "Cooperative timed roadmaps for multi-agent path planning")]
struct Cli {
    /// JSON file with per-subcommand defaults; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: commands::Command,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let jobs = cli.jobs.max(1);
    let config = cli.config.clone();
    let result = ctrm_core::par::with_jobs(jobs, move || commands::run(cli.command, config.as_deref(), jobs));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\nUsage: ctrm [OPTIONS] <COMMAND>\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(CliError::Op(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
