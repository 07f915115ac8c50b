//! Experiment configuration and subcommand implementations for the `trunc-estim` tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

pub use config::ExperimentConfig;
