//! Configuration and subcommands behind the `obsdrop` binary.

pub mod config;
pub mod runner;
