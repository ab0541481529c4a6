//! Audit records: per-stage traces and per-trial outcomes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// One stage of a proximal continuation run.
///
/// Stage `j` (with `j = 0` the initialization) solves the subproblem with
/// amplitude `lambda = λ_{j-1}` centred at the previous stage's output and
/// records the resulting point `center = x_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub center: Vec<f64>,
    pub radius: f64,
    pub lambda: f64,
    /// Accuracy requested from the stage estimator.
    pub accuracy: f64,
    /// Initialization bound handed to the oracle (streaming variants only).
    pub init_bound: Option<f64>,
    pub samples_used: u64,
    pub exact_prox_minimizer: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    /// Starting point for the first stage, when the method has one.
    pub start: Option<Vec<f64>>,
    pub stages: Vec<StageRecord>,
}

impl StageTrace {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn total_samples(&self) -> u64 {
        self.stages.iter().map(|s| s.samples_used).sum()
    }

    /// Running totals of samples across stages.
    pub fn cumulative_samples(&self) -> Vec<u64> {
        self.stages
            .iter()
            .scan(0u64, |acc, s| {
                *acc += s.samples_used;
                Some(*acc)
            })
            .collect()
    }

    pub fn last_point(&self) -> Option<&[f64]> {
        self.stages.last().map(|s| s.center.as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    NaiveMarkov,
    BestOfM,
    RobustDistance,
    Proxboost,
    BoostErm,
    BoostErmc,
    BoostAlg,
    BoostAlgc,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::NaiveMarkov,
        Method::BestOfM,
        Method::RobustDistance,
        Method::Proxboost,
        Method::BoostErm,
        Method::BoostErmc,
        Method::BoostAlg,
        Method::BoostAlgc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::NaiveMarkov => "naive-markov",
            Method::BestOfM => "best-of-m",
            Method::RobustDistance => "robust-distance",
            Method::Proxboost => "proxboost",
            Method::BoostErm => "boost-erm",
            Method::BoostErmc => "boost-ermc",
            Method::BoostAlg => "boost-alg",
            Method::BoostAlgc => "boost-algc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Outcome of one macro-replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub method: Method,
    pub epsilon_target: f64,
    pub p: f64,
    pub stages: usize,
    pub m: usize,
    pub samples_used: u64,
    pub final_gap: f64,
    pub success: bool,
    pub wall_ms: u64,
    pub seed: u64,
    /// Set when the run aborted; the trial then counts as a failure.
    pub error: Option<String>,
}

impl TrialRecord {
    /// Success is `final_gap <= epsilon_target`; NaN gaps fail.
    pub fn success_for(final_gap: f64, epsilon_target: f64) -> bool {
        final_gap <= epsilon_target
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("boost".parse::<Method>().is_err());
    }

    #[test]
    fn cumulative_samples_are_running_sums() {
        let stage = |n| StageRecord {
            center: vec![0.0],
            radius: 1.0,
            lambda: 0.0,
            accuracy: 1.0,
            init_bound: None,
            samples_used: n,
            exact_prox_minimizer: None,
        };
        let t = StageTrace {
            start: None,
            stages: vec![stage(3), stage(0), stage(5)],
        };
        assert_eq!(t.cumulative_samples(), vec![3, 3, 8]);
        assert_eq!(t.total_samples(), 8);
    }

    #[test]
    fn nan_gap_is_failure() {
        assert!(!TrialRecord::success_for(f64::NAN, 1.0));
        assert!(TrialRecord::success_for(1.0, 1.0));
    }
}
