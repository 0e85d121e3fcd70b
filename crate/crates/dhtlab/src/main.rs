//! Command-line experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dhtlab::config::Scenario;
use dhtlab::report::{self, Format};
use dhtlab::runner::{self, RunError};

#[derive(Parser)]
#[command(name = "dhtlab", about = "Covert-channel experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario and write per-seed metric reports.
    Run {
        /// Path to the scenario JSON.
        config: PathBuf,
        /// Output directory; report files are written as report.csv/json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutputFormat,
        /// Override the scenario's repetition count.
        #[arg(long)]
        seeds: Option<usize>,
        /// Exit with status 3 if any seed fails to recover the steganogram.
        #[arg(long)]
        require_recovery: bool,
    },
    /// Check a scenario file without running it.
    Validate { config: PathBuf },
}

fn load(path: &PathBuf) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    Scenario::from_json(&text).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load(&config) {
            Ok(_) => {
                println!("ok: {}", config.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("invalid scenario: {e}");
                ExitCode::from(2)
            }
        },
        Command::Run {
            config,
            out,
            format,
            seeds,
            require_recovery,
        } => {
            let mut scenario = match load(&config) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("invalid scenario: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(n) = seeds {
                scenario.repetitions = n;
            }
            let result = match runner::run(&scenario) {
                Ok(r) => r,
                Err(RunError::Config(e)) => {
                    eprintln!("invalid scenario: {e}");
                    return ExitCode::from(2);
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    return ExitCode::FAILURE;
                }
            };
            if let Err(e) = std::fs::create_dir_all(&out) {
                eprintln!("cannot create {}: {e}", out.display());
                return ExitCode::FAILURE;
            }
            let (fmt, name) = match format {
                OutputFormat::Csv => (Format::Csv, "report.csv"),
                OutputFormat::Json => (Format::Json, "report.json"),
            };
            let path = out.join(name);
            if let Err(e) = report::emit(&result, fmt, &path) {
                eprintln!("cannot write report: {e}");
                return ExitCode::FAILURE;
            }
            let recovered = result.seeds.iter().filter(|s| s.recovered).count();
            println!(
                "{} seeds, {} recovered, report: {}",
                result.seeds.len(),
                recovered,
                path.display()
            );
            if require_recovery && recovered < result.seeds.len() {
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
    }
}
