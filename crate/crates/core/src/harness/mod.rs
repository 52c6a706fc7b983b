//! Data generation, metrics, configuration, logging and run drivers.

pub mod config;
pub mod log;
pub mod metrics;
pub mod run;
pub mod scenes;
pub mod tasks;

pub use config::RunConfig;
