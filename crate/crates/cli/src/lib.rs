//! Command-line front end: embedding files, plans, heatmaps, training and
//! sweeps.

pub mod args;
pub mod commands;
pub mod config;
pub mod embfile;
pub mod error;
pub mod pgm;

pub use args::Cli;
pub use commands::run;
pub use config::{Overrides, RunConfig};
pub use embfile::EmbeddingFile;
pub use error::{CliError, CliResult};
