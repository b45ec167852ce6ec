//! Experiment configuration, batch runner, metrics and the CLI.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod graphs;
pub mod metrics;
