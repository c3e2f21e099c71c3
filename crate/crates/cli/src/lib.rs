//! Command-line front end: ingestion, fitting and analysis runs with
//! reproducible, manifest-stamped outputs.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 numerical or fit
//! error. `FAMSCALE_THREADS` sets the worker thread count; results do not
//! depend on it.

mod args;
mod commands;
mod manifest;

use std::fmt;

pub use args::{Cli, Command};
pub use commands::parse_params_json;
pub use manifest::RunManifest;

/// Environment variable selecting the worker thread count.
pub const THREADS_ENV: &str = "FAMSCALE_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid user input.
    Input(String),
    /// A fit or analysis failed numerically.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

/// Parsing and validation errors are input errors; everything else the
/// library reports is numerical.
pub(crate) fn classify(context: &str, e: famscale::Error) -> CliError {
    use famscale::Error;
    let msg = format!("{context}: {e}");
    match e {
        Error::Format(_) | Error::Validation(_) | Error::Config(_) => CliError::Input(msg),
        Error::Domain(_) | Error::Fit { .. } => CliError::Numerical(msg),
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Input(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A pool may already exist when called repeatedly in-process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    commands::dispatch(cli.command)
}
