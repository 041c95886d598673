//! Experiment orchestration behind the command-line tool.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod svg;
pub mod verify;

pub use commands::*;
pub use config::{ExperimentConfig, Split};
pub use pipeline::*;
pub use verify::{run_verify, VerifyOptions, VerifyReport};
