//! Command-line driver for sgflow: configuration, runs, sweeps, artifacts
//! and the self-check battery.

pub mod app;
pub mod checks;
pub mod config;
pub mod output;
pub mod run;

pub use config::{PartialConfig, Problem, RunConfig};
pub use run::{solve, sweep, RunManifest, SweepRun};
