mod args;
mod commands;
mod config;
mod logging;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Bad flags, missing inputs or invalid settings. Exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<datasift::Error>() {
        Some(datasift::Error::Config(_) | datasift::Error::UnchangedVersion(_)) => 1,
        _ => 2,
    }
}

/// The error chain, skipping causes whose text the outer message already includes.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
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
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let msg = describe(&err);
            if tracing::dispatcher::has_been_set() {
                tracing::error!("{msg}");
            } else {
                eprintln!("error: {msg}");
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
