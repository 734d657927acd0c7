//! Experiment harness: configuration parsing, experiment drivers, and
//! convergence-report emission for the `muckfem` binary.

pub mod config;
pub mod experiments;
pub mod report;
