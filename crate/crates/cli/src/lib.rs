//! Benchmark harness and CLI surface over the sharded graph-unlearning core.

pub mod bench;
pub mod config;
pub mod plot;
pub mod report;
