//! The operator surface: one subcommand per pipeline stage plus the
//! interactive REPL. See `sidenet --help`.

pub mod commands;
pub mod config;
pub mod repl;

use clap::Parser;

pub use commands::{build_runner, Cli, Cmd, HypRecord, MethodRunner};
pub use config::ExperimentConfig;
pub use repl::{ReplSession, TranscriptEntry};

/// Run with explicit arguments (the first element is the program name).
pub fn run<I, T>(args: I) -> crate::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)
        .map_err(|e| crate::Error::Config(e.to_string()))?;
    commands::run_cli(cli)
}

/// Entry point for the binary: parse std::env args, map failures to a
/// single machine-parsable stderr line and a nonzero exit code.
pub fn run_from_env() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Clap handles --help/--version printing itself.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::run_cli(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
