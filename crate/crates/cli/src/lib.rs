//! Configuration parsing and command dispatch for the `hilo` binary.

pub mod commands;
pub mod config;

pub use commands::{dispatch, latest_dir, Outcome};
pub use config::{Command, ConfigError, Origin, RunConfig, KEYS};
