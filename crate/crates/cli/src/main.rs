//! `pstein`: batch driver for probabilistic post-stack impedance inversion.
//!
//! Subcommands read one flat key=value config file, write their artifacts
//! into `--out`, and record the fully resolved configuration as
//! `<out>/manifest` so every run can be reproduced exactly. Exit codes:
//! 0 success, 1 configuration error, 2 numerical failure, 3 I/O error.

mod commands;
mod config;
mod matrixfile;

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_config, render_manifest, Experiment, RunConfig};

#[derive(Parser)]
#[command(
    name = "pstein",
    version,
    about = "Probabilistic post-stack seismic impedance inversion",
    after_help = config::defaults_help()
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a layered synthetic model, smooth background, and observed data
    #[command(after_help = config::defaults_help())]
    Synth(RunArgs),
    /// Invert observed data (experiment = svgd | pnp-svgd | pnp-pd)
    #[command(after_help = config::defaults_help())]
    Invert(RunArgs),
    /// Summarize a stored ensemble: pixel histogram and trace interval CSVs
    #[command(after_help = config::defaults_help())]
    Stats(RunArgs),
    /// Verify operator adjoints with randomized dot tests
    #[command(after_help = config::defaults_help())]
    Dottest(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a key=value configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
}

/// Failures mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<pstein_core::Error> for CliError {
    fn from(e: pstein_core::Error) -> Self {
        match e {
            pstein_core::Error::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<matrixfile::ReadError> for CliError {
    fn from(e: matrixfile::ReadError) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    match Cli::try_parse() {
        Ok(cli) => match execute(cli) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("pstein: {e}");
                ExitCode::from(e.code())
            }
        },
        Err(e) => {
            // --help and --version arrive here as "errors" but are success.
            let failed = e.use_stderr();
            let _ = e.print();
            if failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    init_thread_pool()?;
    let (verb, args) = match cli.cmd {
        Cmd::Synth(a) => (Experiment::Synth, a),
        Cmd::Invert(a) => (Experiment::Svgd, a),
        Cmd::Stats(a) => (Experiment::Stats, a),
        Cmd::Dottest(a) => (Experiment::Dottest, a),
    };
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    resolve_experiment(&mut cfg, verb, matches!(cli_cmd_name(verb), "invert"))?;
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    fs::write(args.out.join("manifest"), render_manifest(&cfg))
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    commands::run(&cfg, &args.out)
}

fn cli_cmd_name(verb: Experiment) -> &'static str {
    match verb {
        Experiment::Synth => "synth",
        Experiment::Svgd | Experiment::PnpSvgd | Experiment::PnpPd => "invert",
        Experiment::Stats => "stats",
        Experiment::Dottest => "dottest",
    }
}

/// Fills in the experiment from the subcommand or checks that an explicit
/// one is compatible with it. `invert` accepts the three inversion methods;
/// the other subcommands accept only their own name.
fn resolve_experiment(
    cfg: &mut RunConfig,
    default: Experiment,
    is_invert: bool,
) -> Result<(), CliError> {
    match cfg.experiment {
        None => {
            cfg.experiment = Some(default);
            Ok(())
        }
        Some(e) => {
            let ok = if is_invert {
                matches!(e, Experiment::Svgd | Experiment::PnpSvgd | Experiment::PnpPd)
            } else {
                e == default
            };
            if ok {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "config sets experiment={} but the subcommand is {}",
                    e.token(),
                    cli_cmd_name(default)
                )))
            }
        }
    }
}

fn init_thread_pool() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("PSTEIN_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "PSTEIN_THREADS must be a positive integer, got `{v}`"
                ))
            })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}
