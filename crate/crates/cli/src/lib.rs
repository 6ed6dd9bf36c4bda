//! Experiment harness for prunelab: config files, run artifacts, plots,
//! oracle verification and parameter sweeps.

pub mod bound;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod plot;
pub mod sweep;
pub mod verify;

pub use error::{CliError, CliResult};
