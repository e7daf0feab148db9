//! Command-line front end for `netobs`.
//!
//! [`run_from_args`] runs a command in-process and returns the exit code
//! together with what would be written to stdout/stderr; the binary is a
//! thin wrapper around it.

pub mod args;
mod commands;
pub mod report;

use std::ffi::OsString;

use clap::Parser;

pub use args::Cli;
pub use report::{EXIT_FAILS, EXIT_INDETERMINATE, EXIT_INPUT, EXIT_OK};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run_from_args<I, T>(argv: I) -> RunOutput
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => commands::run(cli),
        Err(e) => {
            let text = e.render().to_string();
            let code = e.exit_code();
            if code == 0 {
                RunOutput { code, stdout: text, stderr: String::new() }
            } else {
                RunOutput { code: EXIT_INPUT, stdout: String::new(), stderr: text }
            }
        }
    }
}
