//! Configuration and command implementations behind the `edpgnn` binary.

pub mod commands;
pub mod config;

pub use config::RunConfig;
