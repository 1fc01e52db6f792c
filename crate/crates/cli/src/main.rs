//! `objhal` command-line front end.
//!
//! Exit status: 0 success, 2 usage, 3 bad input, 4 upstream service,
//! 5 internal error. Failures also print one JSON error record on stderr.

mod args;
mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use objhal::ErrorKind;

use args::Cli;

fn exit_status(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 2,
        ErrorKind::Input => 3,
        ErrorKind::Upstream => 4,
        ErrorKind::Internal => 5,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Usage => "usage",
        ErrorKind::Input => "input",
        ErrorKind::Upstream => "upstream",
        ErrorKind::Internal => "internal",
    }
}

fn report_failure(code: &str, kind: &str, message: &str, status: u8) -> ExitCode {
    let record = serde_json::json!({ "error": code, "kind": kind, "message": message, "exit_code": status });
    eprintln!("{record}");
    ExitCode::from(status)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| commands::run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            let kind = e.kind();
            report_failure(e.code(), kind_name(kind), &e.to_string(), exit_status(kind))
        }
        Err(_) => report_failure("Panic", "internal", "internal invariant violated", 5),
    }
}
