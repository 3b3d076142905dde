//! Command-line front end.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
pub use commands::{ControllerFile, SCHEMA};
pub use config::RunConfig;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 2;
    /// Non-convergence, failed certification or a numerical method failure.
    pub const FAILURE: i32 = 3;
    pub const IO: i32 = 4;
}

/// Result of a command that ran to completion.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub summary: String,
}

#[derive(Debug, Parser)]
#[command(name = "datalyap", version, about = "Data-driven Lyapunov certificates and switching controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides system.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config output_dir, then $DATALYAP_OUT, then ./datalyap-out).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Built-in system; overrides system.preset and system.linear.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a system and write dataset CSVs plus a manifest.
    Generate(Common),
    /// Train a certificate on autonomous data and check exponential attraction.
    Certify(Common),
    /// Identify, initialize, train on control data and write a controller.
    Synthesize(Common),
    /// Simulate a controller from seeded starts and write trajectories.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Controller file (default: <out>/controller.json).
        #[arg(long)]
        controller: Option<PathBuf>,
    },
    /// Pretty-print a JSON report.
    Report {
        file: PathBuf,
    },
}

/// Exit code for an error raised while running a command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Format { .. } => exit::IO,
        Error::Invalid(_) | Error::Dimension(_) => exit::USAGE,
        _ => exit::FAILURE,
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            // a missing config file is a usage problem, not a data one
            Error::Io { path, source } => Error::Invalid(format!("cannot read config {path}: {source}")),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.system.seed = seed;
    }
    if let Some(name) = &common.preset {
        cfg.system.preset = Some(name.clone());
        cfg.system.linear = None;
    }
    cfg.validate()?;
    cfg.system()?;
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<Outcome, (i32, Error)> {
    let setup = |c: &Common| load_config(c).map_err(|e| (exit::USAGE, e));
    let run = |r: Result<Outcome, Error>| r.map_err(|e| (exit_code(&e), e));
    match command {
        Command::Generate(c) => {
            let cfg = setup(&c)?;
            run(commands::generate(&cfg, &cfg.output_dir(c.out.as_deref())))
        }
        Command::Certify(c) => {
            let cfg = setup(&c)?;
            run(commands::certify(&cfg, &cfg.output_dir(c.out.as_deref())))
        }
        Command::Synthesize(c) => {
            let cfg = setup(&c)?;
            run(commands::synthesize(&cfg, &cfg.output_dir(c.out.as_deref())))
        }
        Command::Simulate { common, controller } => {
            let cfg = setup(&common)?;
            let out = cfg.output_dir(common.out.as_deref());
            run(commands::simulate(&cfg, &out, controller.as_deref()))
        }
        Command::Report { file } => run(commands::report(&file)),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            outcome.code
        }
        Err((code, e)) => {
            eprintln!("error: {e}");
            code
        }
    }
}
