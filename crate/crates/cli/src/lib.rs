//! File formats and the `lvd` command-line pipeline.
//!
//! Data roles are kept apart by file: `train` learns the metric from one file,
//! `calibrate` reads residuals from a second and `predict` scores a third.
//! Feeding calibration rows to `train` voids the coverage guarantee, and
//! nothing here can detect it.

pub mod artifact;
pub mod calibration;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod intervals;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use commands::{run, Cli};
pub use error::{CliError, Result};

/// Shortest text that parses back to the same `f64`; infinities print as
/// `inf` and `-inf`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(text) => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
