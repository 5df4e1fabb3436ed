//! Command-line front end: scenario files, experiment runs, reports and plots.

pub mod commands;
pub mod error;
pub mod experiment;
pub mod rows;
pub mod scenario;
pub mod svg;

pub use error::{CliError, CliResult};
