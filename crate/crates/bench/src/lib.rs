//! Experiment harness: configurations, single runs, sweeps, aggregation and
//! report files.

pub mod aggregate;
pub mod config;
pub mod explain;
pub mod report;
pub mod run;
pub mod sweep;
pub mod synth;
