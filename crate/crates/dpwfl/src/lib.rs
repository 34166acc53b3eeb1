//! Experiment driver for differentially private over-the-air federated
//! learning: configuration files, CSV artifacts and the subcommands of the
//! `dpwfl` binary.

#![warn(missing_docs)]

pub mod config;
pub mod experiments;
pub mod formats;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind, Preset};
pub use experiments::{run, Artifact, RunOutput};
