//! Experiment harness for the soilx simulator.
//!
//! Library half of the `soilx` binary: every subcommand is a plain function
//! here so that tests can drive experiments without spawning processes.

pub mod harness;
pub mod manifest;
pub mod orient;
pub mod phase;
pub mod report;

pub use harness::{cmd_ablate, cmd_data_sweep, cmd_eval, AblationMode, EvalConfig};
pub use report::{mae, MaeReport, Table};
