//! Command-line front end for the `spawntrack` tracker: scenario simulation,
//! tracking runs and figure data tables.

pub mod commands;
pub mod error;
pub mod io;

pub use error::{CliError, CliResult};
