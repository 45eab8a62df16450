//! Experiment runner for semi-supervised mixing: configuration, commands
//! and report files.

pub mod commands;
pub mod config;
pub mod report;

pub use config::RunConfig;
