//! Batch driver for fsqkd: configuration files, presets, seeded runs and
//! CSV output.

pub mod config;
pub mod output;
pub mod run;

pub use config::{load_config, resolve, ConfigError, ScenarioConfig};
pub use run::{run, Command, RunError};
