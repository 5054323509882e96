//! `krsketch` command-line driver.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! numerical, I/O or failed-check errors.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::{Common, SweepKind};
use config::ConfigMap;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(krsketch::Error),
    Check(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Run(_) | CliError::Check(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "error: {e}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<krsketch::Error> for CliError {
    fn from(e: krsketch::Error) -> Self {
        use krsketch::Error as E;
        match e {
            E::InvalidArgument(_) | E::DimensionMismatch { .. } | E::CapExceeded { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Run(other),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.common.config {
        Some(path) => ConfigMap::load(path)?,
        None => ConfigMap::default(),
    };
    let verbose = cfg.switch(cli.common.verbose, "verbose")?;
    env_logger::Builder::new()
        .filter_level(if verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .format_timestamp(None)
        .try_init()
        .ok();
    if let Some(jobs) = cfg.layer(cli.common.jobs, "jobs")? {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    let common = Common::resolve(&cli.common, &cfg)?;
    match &cli.command {
        Command::SweepR(a) => commands::sweep(SweepKind::R, a, &common, &cfg),
        Command::SweepN(a) => commands::sweep(SweepKind::N, a, &common, &cfg),
        Command::SweepP(a) => commands::sweep(SweepKind::P, a, &common, &cfg),
        Command::Eit(a) => commands::eit_cmd(a, &common, &cfg),
        Command::EmbedTest(a) => commands::embed_test(a, &common, &cfg),
        Command::ZetaTest(a) => commands::zeta_test(a, &common, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("krsketch: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
