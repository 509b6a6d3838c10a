//! Library side of the `zsl` command-line tool.

pub mod commands;
pub mod config;

pub use config::{Overrides, RunConfig};
