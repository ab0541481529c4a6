pub mod composite;
pub mod engine;
pub mod erm;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod oracles;
pub mod problem;
pub mod problems;
pub mod regularizer;
pub mod rng;
pub mod robust;
pub mod trace;

pub use error::{Error, Result};
pub use problem::{CompositeProblem, GradientModel, GroundTruth, ProblemInstance};
pub use rng::{derive_rng, RngStream};
pub use trace::{Method, StageRecord, StageTrace, TrialRecord};
