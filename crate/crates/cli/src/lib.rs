//! The `wisense` command line: argument definitions and one handler per
//! subcommand, each a thin layer over the library crates.

pub mod args;
pub mod commands;
pub mod error;

pub use args::{Cli, Command, Format};
pub use commands::execute;
pub use error::{exit, CliError};
