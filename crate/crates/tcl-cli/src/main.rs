//! Command-line front end: parse and validate a run configuration, execute
//! the requested pipeline stages, and emit CSV artifacts plus a manifest.
//!
//! Exit codes: 0 success; 2 malformed configuration (diagnostic names the
//! field path); 3 numerical precondition failure (diagnostic names the
//! violated identity).

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use pipeline::RunFailure;

#[derive(Parser)]
#[command(
    name = "tcl",
    version,
    about = "Perturbative time-convolutionless generators for open quantum systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory for output artifacts (created if absent).
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    /// Worker threads for grid evaluation (0 = one per CPU).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the pipeline described by a configuration file.
    Run { config: PathBuf },
    /// Parse and invariant-check a configuration file without computing.
    Validate { config: PathBuf },
}

fn load(path: &PathBuf) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("config: cannot read {}: {e}", path.display()))?;
    RunConfig::from_toml_str(&text).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // ignore failure: the global pool may already exist in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match &cli.command {
        Command::Validate { config } => match load(config) {
            Ok(_) => {
                println!("ok");
                ExitCode::SUCCESS
            }
            Err(msg) => {
                eprintln!("invalid config: {msg}");
                ExitCode::from(2)
            }
        },
        Command::Run { config } => {
            let cfg = match load(config) {
                Ok(c) => c,
                Err(msg) => {
                    eprintln!("invalid config: {msg}");
                    return ExitCode::from(2);
                }
            };
            match pipeline::run(&cfg, &cli.output_dir, cli.quiet) {
                Ok(_) => ExitCode::SUCCESS,
                Err(RunFailure::Io(e)) => {
                    eprintln!("io error: {e}");
                    ExitCode::FAILURE
                }
                Err(RunFailure::Numerical(e)) => {
                    eprintln!("numerical precondition failed: {e}");
                    ExitCode::from(3)
                }
            }
        }
    }
}
