//! Experiment harness: configuration, parallel macro-replications, tail
//! statistics, output files, and the verification and calibration suites.

pub mod calibrate;
pub mod config;
pub mod emit;
pub mod runner;
pub mod stats;
pub mod verify;

pub use config::{OracleKind, ProblemFamily, RunConfig};
pub use emit::{csv_string, mask_wall_ms, summary_json, write_outputs};
pub use runner::{run_trials, Workload};
pub use stats::{clopper_pearson_upper, empirical_failure, summarize, SummaryReport};
