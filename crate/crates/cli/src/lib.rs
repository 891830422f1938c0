//! Experiment orchestration for the `bnnrisk` command-line tool.

pub mod cache;
pub mod config;
pub mod plot;
pub mod run;
