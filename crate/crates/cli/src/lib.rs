//! Command-line front end for `fredstop`.
//!
//! Every subcommand is reachable through [`run`], which takes an argument
//! list and output sinks and returns the process exit code:
//! 0 success, 1 usage or configuration error, 2 solver failure or
//! non-convergence, 3 verification failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;
use thiserror::Error;

use fredstop::fredholm::FredholmError;
use fredstop::oracle::OracleError;
use fredstop::problem::ProblemError;
use fredstop::solver::SolverError;

pub mod args;
pub mod commands;
pub mod config;
pub mod output;
pub mod verify;


pub use args::{Cli, Command, Options};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Fredholm(#[from] FredholmError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("solver stopped after {sweeps} sweeps without meeting its tolerances")]
    NotConverged { sweeps: usize },
    #[error("{failed} of {total} verification checks failed")]
    VerificationFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Csv { .. } => EXIT_USAGE,
            CliError::Problem(e) => match e {
                ProblemError::Numerics(_) => EXIT_SOLVER,
                _ => EXIT_USAGE,
            },
            CliError::Fredholm(
                FredholmError::BadCGrid { .. }
                | FredholmError::BadNodes { .. }
                | FredholmError::TooFewNodes(_)
                | FredholmError::LengthMismatch { .. }
                | FredholmError::BadValues { .. },
            ) => EXIT_USAGE,
            CliError::Solver(SolverError::BadConfig(_)) => EXIT_USAGE,
            CliError::Oracle(
                OracleError::Resolution { .. } | OracleError::BadConfig(_) | OracleError::TooFewPaths(_),
            ) => EXIT_USAGE,
            CliError::Fredholm(_) | CliError::Solver(_) | CliError::Oracle(_) | CliError::NotConverged { .. } => {
                EXIT_SOLVER
            }
            CliError::VerificationFailed { .. } => EXIT_VERIFY,
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit code. Reports go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let raw: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let expanded = match config::expand_config(raw) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(expanded) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
            return code;
        }
    };
    match commands::dispatch(&cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
