//! Command-line runner for nonlinear progressive wave experiments.

mod experiments;
mod output;
mod scenario;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use npe::NpeError;

#[derive(Debug)]
pub enum CliError {
    Parse(String),
    Npe(NpeError),
    Failed(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Npe(e) if e.is_numeric() => 4,
            CliError::Npe(_) | CliError::Failed(_) => 3,
        }
    }

    fn class(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Parse(_) => "parse",
            CliError::Npe(e) if e.is_numeric() => "numeric",
            CliError::Npe(_) => "precondition",
            CliError::Failed(_) => "validation",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(m) | CliError::Failed(m) | CliError::Io(m) => f.write_str(m),
            CliError::Npe(e) => write!(f, "{e}"),
        }
    }
}

impl From<NpeError> for CliError {
    fn from(e: NpeError) -> Self {
        CliError::Npe(e)
    }
}

#[derive(Parser)]
#[command(name = "npe", version, about = "Run nonlinear progressive wave experiments from JSON scenarios")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "NPE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (or re-run a manifest) and write its outputs.
    Run {
        file: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scenario override `dotted.key=value`; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Check a scenario without solving.
    Validate {
        file: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn read(file: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(file).map_err(|e| CliError::Io(format!("{}: {e}", file.display())))
}

fn output_dir(file: &Path, out: Option<PathBuf>, s: &scenario::Scenario) -> PathBuf {
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    if let Some(o) = out {
        return o;
    }
    if let Some(o) = &s.output {
        return o.clone();
    }
    let leaf = s.name.clone().unwrap_or(stem);
    match std::env::var_os("NPE_OUTPUT_ROOT") {
        Some(root) => PathBuf::from(root).join(leaf),
        None => PathBuf::from("npe-output").join(leaf),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Parse(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Run { file, out, overrides } => {
            let (s, value) = scenario::load(&read(&file)?, &overrides)?;
            let dir = output_dir(&file, out, &s);
            let start = Instant::now();
            let outcome = experiments::run(&s)?;
            let info = output::RunInfo {
                scenario: &value,
                wall_time_s: start.elapsed().as_secs_f64(),
                threads: rayon::current_num_threads(),
            };
            let written = output::write_outputs(&dir, &outcome.table, &outcome.diagnostics, &info)?;
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Validate { file, overrides } => {
            let (s, _) = scenario::load(&read(&file)?, &overrides)?;
            let checks = experiments::validate(&s)?;
            let mut failed = Vec::new();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                if !c.passed {
                    failed.push(c.name.clone());
                }
            }
            if failed.is_empty() {
                println!("all checks passed");
                Ok(())
            } else {
                Err(CliError::Failed(format!("failed checks: {}", failed.join(", "))))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.code())
        }
    }
}
