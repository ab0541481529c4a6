//! Empirical tail probabilities with exact binomial confidence bounds.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};
use crate::trace::{Method, TrialRecord};

/// One-sided Clopper–Pearson upper bound on a binomial rate after `k`
/// failures in `n` trials, at confidence `conf`.
pub fn clopper_pearson_upper(k: u64, n: u64, conf: f64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(Error::invalid(format!("need 0 <= k <= n with n > 0, got k={k}, n={n}")));
    }
    if !(conf > 0.0 && conf < 1.0) {
        return Err(Error::invalid(format!("confidence must lie in (0,1), got {conf}")));
    }
    if k == n {
        return Ok(1.0);
    }
    let beta = Beta::new((k + 1) as f64, (n - k) as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(beta.inverse_cdf(conf))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub method: Option<Method>,
    pub replications: u64,
    pub failures: u64,
    pub failure_rate: f64,
    pub upper95: f64,
    pub upper99: f64,
    pub mean_samples: f64,
    pub median_samples: f64,
    pub epsilon_target: f64,
    pub nominal_p: f64,
    /// The tail claim under test.
    pub bound: String,
    /// Trials that aborted with an error (counted as failures).
    pub errors: u64,
}

fn median(mut v: Vec<u64>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
    }
}

/// Failure statistics of `records` against `eps_target`. A trial fails when
/// its gap exceeds the target or is NaN.
pub fn empirical_failure(records: &[TrialRecord], eps_target: f64) -> Result<SummaryReport> {
    if records.is_empty() {
        return Err(Error::invalid("no records to summarize"));
    }
    let n = records.len() as u64;
    let failures = records
        .iter()
        .filter(|r| !TrialRecord::success_for(r.final_gap, eps_target))
        .count() as u64;
    let samples: Vec<u64> = records.iter().map(|r| r.samples_used).collect();
    let mean = samples.iter().map(|&s| s as f64).sum::<f64>() / n as f64;
    let method = records[0].method;
    let nominal_p = records[0].p;
    Ok(SummaryReport {
        method: records.iter().all(|r| r.method == method).then_some(method),
        replications: n,
        failures,
        failure_rate: failures as f64 / n as f64,
        upper95: clopper_pearson_upper(failures, n, 0.95)?,
        upper99: clopper_pearson_upper(failures, n, 0.99)?,
        mean_samples: mean,
        median_samples: median(samples),
        epsilon_target: eps_target,
        nominal_p,
        bound: format!("P(gap > {eps_target}) <= {nominal_p}"),
        errors: records.iter().filter(|r| r.error.is_some()).count() as u64,
    })
}

/// One report per method, in order of first appearance.
pub fn summarize(records: &[TrialRecord]) -> Result<Vec<SummaryReport>> {
    let mut methods: Vec<Method> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let group: Vec<TrialRecord> = records.iter().filter(|r| r.method == m).cloned().collect();
            empirical_failure(&group, group[0].epsilon_target)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(trial_id: u64, gap: f64, samples: u64) -> TrialRecord {
        TrialRecord {
            trial_id,
            method: Method::BoostAlg,
            epsilon_target: 1.0,
            p: 0.1,
            stages: 3,
            m: 5,
            samples_used: samples,
            final_gap: gap,
            success: gap <= 1.0,
            wall_ms: 0,
            seed: trial_id,
            error: None,
        }
    }

    #[test]
    fn clopper_pearson_fixtures() {
        assert!((clopper_pearson_upper(0, 100, 0.95).unwrap() - 0.0295).abs() < 5e-5);
        // Exact one-sided beta quantile; 0.1775 is sometimes quoted but matches no standard interval.
        assert!((clopper_pearson_upper(10, 100, 0.95).unwrap() - 0.16372).abs() < 5e-5);
        assert!((clopper_pearson_upper(10, 100, 0.975).unwrap() - 0.17622).abs() < 5e-5);
        assert_eq!(clopper_pearson_upper(100, 100, 0.95).unwrap(), 1.0);
        assert!(clopper_pearson_upper(1, 0, 0.95).is_err());
    }

    #[test]
    fn report_fields() {
        let recs: Vec<_> = (0..100)
            .map(|i| record(i, if i < 10 { 2.0 } else { 0.5 }, i + 1))
            .collect();
        let r = empirical_failure(&recs, 1.0).unwrap();
        assert_eq!(r.failures, 10);
        assert_eq!(r.failure_rate, 0.1);
        assert!(r.upper95 >= r.failure_rate && r.upper99 >= r.upper95);
        assert_eq!(r.mean_samples, 50.5);
        assert_eq!(r.median_samples, 50.5);
        assert_eq!(r.method, Some(Method::BoostAlg));
    }

    #[test]
    fn all_fail_and_nan() {
        let recs: Vec<_> = (0..5).map(|i| record(i, f64::NAN, 1)).collect();
        let r = empirical_failure(&recs, 1.0).unwrap();
        assert_eq!(r.failure_rate, 1.0);
        assert_eq!(r.upper95, 1.0);
        assert!(empirical_failure(&[], 1.0).is_err());
    }
}
