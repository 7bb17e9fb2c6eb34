//! Command-line surface: resolves a run configuration, executes one of the
//! control layers or studies, and writes every table, trace and report into
//! the output directory together with a manifest.

mod commands;
mod config;
mod output;

pub use commands::{compare_table, execute, rho_grid, rho_plateau, rho_sweep, RhoPlateauRow, RhoSweepRow, RunOutput};
pub use config::{Cli, Command, Overrides, RunArgs, RunConfig};
pub use output::{Artifact, LabeledTable, Manifest};

use std::path::Path;

use clap::Parser;
use serde_json::json;
use thiserror::Error;

use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl CliError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io(format!("{}: {e}", path.display()))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Io(_) | Self::Sim(SimError::Io(_)) => "io",
            Self::Sim(SimError::Validation(_)) => "validation",
            Self::Sim(SimError::Parse(_)) => "parse",
            Self::Sim(_) => "run",
        }
    }

    /// 2 for problems with the inputs, 1 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "run" | "io" => 1,
            _ => 2,
        }
    }

    /// Machine-readable form written to `error.json` and standard error.
    pub fn report(&self) -> serde_json::Value {
        let violations = match self {
            Self::Sim(SimError::Validation(v)) => v.clone(),
            _ => vec![],
        };
        json!({ "status": "error", "kind": self.kind(), "message": self.to_string(), "violations": violations })
    }
}

/// Runs the command line `args` (including the program name) and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let config = match RunConfig::resolve(cli.command, &cli.args) {
        Ok(c) => c,
        Err(e) => return fail(&e, cli.args.out.as_deref()),
    };
    match execute(&config) {
        Ok(out) => {
            for line in &out.lines {
                println!("{line}");
            }
            println!("wrote {} files to {}", out.written, config.out.display());
            0
        }
        Err(e) => fail(&e, Some(&config.out)),
    }
}

fn fail(e: &CliError, out: Option<&Path>) -> i32 {
    let report = e.report();
    let text = serde_json::to_string_pretty(&report).unwrap_or_else(|_| e.to_string());
    if let Some(dir) = out {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("error.json"), format!("{text}\n"));
        }
    }
    eprintln!("{text}");
    e.exit_code()
}
