//! Experiment pipeline: configuration, orchestration, and artifact I/O,
//! shared by the `conftrack` binary and the integration suites.

pub mod artifacts;
pub mod config;
pub mod pipeline;
