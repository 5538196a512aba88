//! Batch entry points for the pano-nav simulator: dataset generation,
//! localizer training, gradient checking, evaluation and reporting.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::Context;
pub use config::RunConfig;
pub use error::CliError;
