//! Experiment driver for the anonymization library: dataset synthesis and
//! preparation, federated training, anonymization, evaluation and report
//! emission, all from declarative key/value config files.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod reports;

pub use error::{CliError, ExitCode};
