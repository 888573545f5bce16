//! `anyq`: calibrate, quantize, dequantize, eval, bench and inspect.
//!
//! Exit status is 0 on success, 1 for usage errors (bad flags, config or
//! environment; nothing has been read or written) and 2 for data errors
//! (unreadable or inconsistent inputs). Messages go to standard error with a
//! `usage error:` or `data error:` prefix and name the offending flag.

mod args;
mod commands;
mod error;
mod settings;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn dispatch(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Quantize(a) => commands::quantize(a),
        Command::Dequantize(a) => commands::dequantize(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Inspect(a) => commands::inspect(a),
    }
}

fn run(argv: impl IntoIterator<Item = std::ffi::OsString>) -> Result<(), CliError> {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            let text = text.strip_prefix("error: ").unwrap_or(&text).trim_end();
            return Err(CliError::Usage(text.to_owned()));
        }
    };
    match settings::thread_cap()? {
        // Results do not depend on the worker count, only the wall time.
        Some(n) => anyq::with_threads(n, || dispatch(&cli.command))
            .map_err(|e| CliError::usage("ANYQ_THREADS", e))?,
        None => dispatch(&cli.command),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
