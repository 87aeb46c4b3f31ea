//! Command-line interface.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | invalid scenario or report, unknown export format |
//! | 2 | input file missing or unreadable |
//! | 3 | simulation failure (islanded grid, infeasible dispatch) |
//! | 4 | output not writable |
//! | 64 | command-line usage error |

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::report::Report;
use crate::scenario::{load_scenario_file, ScenarioError};
use crate::sim::run_with_chain;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_UNREADABLE: i32 = 2;
pub const EXIT_SIMULATION: i32 = 3;
pub const EXIT_UNWRITABLE: i32 = 4;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "tokengrid", version, about = "Token-economy simulator for integrated energy systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Check a scenario file and list every problem found.
    Validate { path: PathBuf },
    /// Run a scenario and write report.json, timeseries.csv and chain.log.
    Run {
        path: PathBuf,
        /// Output directory, created if missing.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-emit a report as CSV time series or full JSON.
    Export {
        report: PathBuf,
        /// `csv` or `json`.
        #[arg(long, default_value = "csv")]
        format: String,
        /// Write to a file instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match cli.command {
        CliCommand::Validate { path } => cmd_validate(&path, stdout, stderr),
        CliCommand::Run { path, out, seed } => cmd_run(&path, &out, seed, stdout, stderr),
        CliCommand::Export {
            report,
            format,
            out,
        } => cmd_export(&report, &format, out.as_deref(), stdout, stderr),
    }
}

fn scenario_error(e: ScenarioError, stderr: &mut dyn Write) -> i32 {
    let code = match e {
        ScenarioError::Io { .. } => EXIT_UNREADABLE,
        _ => EXIT_INVALID,
    };
    let _ = writeln!(stderr, "error: {e}");
    code
}

pub fn cmd_validate(path: &Path, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    match load_scenario_file(path) {
        Ok(c) => {
            let _ = writeln!(
                stdout,
                "ok: scenario `{}` ({} steps, {} devices, {} contracts)",
                c.name,
                c.schedule.horizon(),
                c.topology.devices.len(),
                c.contracts.len()
            );
            EXIT_OK
        }
        Err(e) => scenario_error(e, stderr),
    }
}

pub fn cmd_run(
    path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let config = match load_scenario_file(path) {
        Ok(c) => c,
        Err(e) => return scenario_error(e, stderr),
    };
    let (report, chain) = match run_with_chain(&config, seed) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: simulation failed: {e}");
            return EXIT_SIMULATION;
        }
    };
    let write = || -> std::io::Result<()> {
        fs::create_dir_all(out_dir)?;
        fs::write(out_dir.join("report.json"), report.to_json())?;
        fs::write(out_dir.join("timeseries.csv"), report.to_csv())?;
        fs::write(out_dir.join("chain.log"), chain.to_json_lines())?;
        Ok(())
    };
    if let Err(e) = write() {
        let _ = writeln!(stderr, "error: cannot write to {}: {e}", out_dir.display());
        return EXIT_UNWRITABLE;
    }
    let _ = writeln!(stdout, "{}", report.summary_line());
    EXIT_OK
}

pub fn cmd_export(
    report: &Path,
    format: &str,
    out: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    if format != "csv" && format != "json" {
        let _ = writeln!(stderr, "error: unknown format `{format}` (expected csv or json)");
        return EXIT_INVALID;
    }
    let text = match fs::read_to_string(report) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(stderr, "error: cannot read {}: {e}", report.display());
            return EXIT_UNREADABLE;
        }
    };
    let parsed = match Report::from_json(&text) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: malformed report: {e}");
            return EXIT_INVALID;
        }
    };
    let body = if format == "csv" {
        parsed.to_csv()
    } else {
        parsed.to_json()
    };
    match out {
        Some(path) => {
            if let Err(e) = fs::write(path, body) {
                let _ = writeln!(stderr, "error: cannot write {}: {e}", path.display());
                return EXIT_UNWRITABLE;
            }
        }
        None => {
            let _ = stdout.write_all(body.as_bytes());
        }
    }
    EXIT_OK
}
