//! Command-line harness for the shearstab solvers: configuration parsing,
//! experiment drivers, run manifests and a scan result cache.

pub mod cache;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod selftest;

pub use cli::main_with;
pub use error::CliError;
