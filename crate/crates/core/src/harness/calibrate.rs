//! Monte-Carlo checks of the oracle 2/3 contract and the robust gradient
//! estimator.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::OracleKind;
use crate::harness::stats::clopper_pearson_upper;
use crate::linalg::dist;
use crate::oracles::{acc_sgd_oracle, composite_prox_minimizer, prox_sgd_oracle, sgd_oracle};
use crate::problem::{CompositeProblem, ProblemInstance};
use crate::problems::{make_composite, make_quadratic, point_at_gap, CompositeKind, QuadraticSpec, Tail};
use crate::rng::derive_rng;
use crate::robust::robust_gradient;

/// Failure statistics of one oracle at one `(δ, λ)` setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub oracle: String,
    pub delta: f64,
    pub lambda: f64,
    pub replications: u64,
    pub failures: u64,
    pub failure_rate: f64,
    pub upper99: f64,
    pub mean_samples: f64,
}

/// The `(δ, λ)` settings, as `(δ, λ/μ)`.
pub const SETTINGS: [(f64, f64); 3] = [(1e-2, 0.0), (1e-2, 8.0), (1e-3, 64.0)];

/// Heavy-tailed quadratic used for the streaming oracles.
pub fn streaming_problem(seed: u64) -> Result<ProblemInstance> {
    make_quadratic(
        &QuadraticSpec {
            dim: 20,
            mu: 1.0,
            lip_grad: 100.0,
            sigma2: 4.0,
            tail: Tail::StudentT(2.5),
        },
        seed,
    )
}

/// Ball-constrained heavy-tailed quadratic used for the proximal oracle.
pub fn composite_problem(seed: u64) -> Result<CompositeProblem> {
    make_composite(
        &QuadraticSpec {
            dim: 10,
            mu: 1.0,
            lip_grad: 50.0,
            sigma2: 4.0,
            tail: Tail::StudentT(2.5),
        },
        CompositeKind::Ball { radius: 1.0 },
        seed,
    )
}

fn row(oracle: OracleKind, delta: f64, lambda: f64, outcomes: &[(f64, u64)]) -> Result<CalibrationRow> {
    let n = outcomes.len() as u64;
    let failures = outcomes.iter().filter(|(g, _)| !(*g <= delta)).count() as u64;
    Ok(CalibrationRow {
        oracle: serde_json::to_value(oracle)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        delta,
        lambda,
        replications: n,
        failures,
        failure_rate: failures as f64 / n as f64,
        upper99: clopper_pearson_upper(failures, n, 0.99)?,
        mean_samples: outcomes.iter().map(|(_, s)| *s as f64).sum::<f64>() / n as f64,
    })
}

/// Runs `oracle` `reps` times at each setting and reports how often the
/// subproblem gap exceeded `δ`.
pub fn calibrate(oracle: OracleKind, reps: u64, seed: u64) -> Result<Vec<CalibrationRow>> {
    let mut rows = Vec::with_capacity(SETTINGS.len());
    for (s, &(delta, lam_ratio)) in SETTINGS.iter().enumerate() {
        let rng_for = |r: u64| derive_rng(seed, &[s as u64, r]);
        let (lambda, outcomes): (f64, Vec<(f64, u64)>) = match oracle {
            OracleKind::Sgd | OracleKind::AccSgd => {
                let problem = streaming_problem(seed)?;
                let lambda = lam_ratio * problem.mu();
                let center = point_at_gap(&problem, 10.0, seed)?;
                let sub = problem.proximal(lambda, &center)?;
                let init = sub.gap(&center)?;
                let outcomes = (0..reps)
                    .into_par_iter()
                    .map(|r| {
                        let (x, n) = if oracle == OracleKind::Sgd {
                            sgd_oracle(&problem, delta, lambda, init, &center, rng_for(r))?
                        } else {
                            acc_sgd_oracle(&problem, delta, lambda, init, &center, rng_for(r))?
                        };
                        Ok((sub.gap(&x)?, n))
                    })
                    .collect::<Result<_>>()?;
                (lambda, outcomes)
            }
            OracleKind::ProxSgd => {
                let problem = composite_problem(seed)?;
                let lambda = lam_ratio * problem.mu();
                let center = problem.prox(&vec![0.0; problem.dim()], 1.0);
                let sub = problem.proximal(lambda, &center)?;
                let best = composite_prox_minimizer(&problem, lambda, &center, 1e-12)?;
                let min = sub.value(&best);
                let init = sub.value(&center) - min;
                let outcomes = (0..reps)
                    .into_par_iter()
                    .map(|r| {
                        let (x, n) = prox_sgd_oracle(&problem, delta, lambda, init, &center, rng_for(r))?;
                        Ok((sub.value(&x) - min, n))
                    })
                    .collect::<Result<_>>()?;
                (lambda, outcomes)
            }
            OracleKind::Exact => return Err(Error::Config("the exact oracle needs no calibration".into())),
        };
        rows.push(row(oracle, delta, lambda, &outcomes)?);
    }
    Ok(rows)
}

/// Tail of the robust gradient estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientRow {
    pub replications: u64,
    pub m: usize,
    pub eps: f64,
    pub failures: u64,
    pub failure_rate: f64,
    pub upper95: f64,
    /// `exp(-m/18)`.
    pub nominal: f64,
}

/// `reps` robust gradient estimates with `m` groups at accuracy `eps` on the
/// streaming calibration problem; a failure is an error above `3 eps`.
pub fn robust_gradient_tail(reps: u64, m: usize, eps: f64, seed: u64) -> Result<GradientRow> {
    let problem = streaming_problem(seed)?;
    let x_hat = point_at_gap(&problem, 1.0, seed)?;
    let truth = problem.grad(&x_hat);
    let failures = (0..reps)
        .into_par_iter()
        .map(|r| {
            let g = robust_gradient(&problem, &x_hat, eps, m, derive_rng(seed, &[r]))?;
            Ok(dist(&g.grad, &truth) > 3.0 * eps)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|f| *f)
        .count() as u64;
    Ok(GradientRow {
        replications: reps,
        m,
        eps,
        failures,
        failure_rate: failures as f64 / reps as f64,
        upper95: clopper_pearson_upper(failures, reps, 0.95)?,
        nominal: (-(m as f64) / 18.0).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_calibration_runs() {
        let rows = calibrate(OracleKind::ProxSgd, 20, 3).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert_eq!(r.replications, 20);
            assert!(r.upper99 >= r.failure_rate && r.mean_samples > 0.0);
            assert_eq!(r.oracle, "prox-sgd");
        }
        assert!(calibrate(OracleKind::Exact, 1, 0).is_err());
    }

    #[test]
    fn gradient_tail_is_deterministic() {
        let a = robust_gradient_tail(50, 7, 0.5, 1).unwrap();
        let b = robust_gradient_tail(50, 7, 0.5, 1).unwrap();
        assert_eq!(a, b);
    }
}
