//! Batch front end: configuration, CSV data, model files and the four verbs.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod modelfile;
pub mod region_syntax;

pub use error::{CliError, CliResult};

/// Environment variable naming the directory searched for configuration files.
pub const CONFIG_DIR_ENV: &str = "LMISYSID_CONFIG_DIR";
/// Configuration file name used when `--config` is absent.
pub const DEFAULT_CONFIG: &str = "lmisysid.toml";
