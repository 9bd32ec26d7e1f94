//! Command-line surface and HTTP service of the neural cellular automata
//! manifold.

pub mod commands;
pub mod service;

use clap::Parser;

pub use commands::{Cli, CliError};

/// Parses `args` (program name first), runs the verb and returns the
/// process exit code: 0 success, 2 usage or configuration error, 3 data
/// error, 4 numeric divergence.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
