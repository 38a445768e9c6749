//! Experiment plumbing: configuration, dataset files, training loops and metrics.

pub mod config;
pub mod io;
pub mod metrics;
pub mod train;
pub mod experiment;
