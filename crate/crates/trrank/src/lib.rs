//! Experiment harness for tensor-ring rank search: configuration, the
//! enumeration oracle, interest-region analysis, and the search/ablation
//! drivers behind the `trrank` binary.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod records;
