// SPDX-License-Identifier: MIT OR Apache-2.0

//! `fsl`: training-free concept sliders from the command line.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure,
//! 3 conformance or verification failure.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::{Cli, CliError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Config(_) => 1,
                CliError::Runtime(_) => 2,
                CliError::Conformance(_) => 3,
            })
        }
    }
}
