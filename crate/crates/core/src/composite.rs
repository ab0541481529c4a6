//! Composite problems `g + h`: robust function-gap estimation, the two
//! composite continuation drivers, and Moreau smoothing of scalar losses.

use serde::{Deserialize, Serialize};

use crate::engine::{init_bound, prox_boost, MinimizationOracle, OracleQuery, Schedule, StageOutput};
use crate::erm::{erm, erm_r, implied_failure, ErmProblem};
use crate::error::{Error, Result};
use crate::problem::CompositeProblem;
use crate::rng::RngStream;
use crate::robust::{extract, robust_gradient, Pseudometric};
use crate::trace::StageTrace;

/// Nonsmooth scalar functions with closed-form Moreau envelopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarFn {
    /// `|t|`.
    Abs,
    /// `max(0, 1 - t)`.
    Hinge,
}

impl ScalarFn {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            ScalarFn::Abs => t.abs(),
            ScalarFn::Hinge => (1.0 - t).max(0.0),
        }
    }

    pub fn lip(self) -> f64 {
        1.0
    }
}

/// Moreau envelope of `|t|`: `t²/(2ν)` for `|t| < ν`, else `|t| - ν/2`.
/// Returns `(value, derivative)`.
pub fn huber(nu: f64, t: f64) -> (f64, f64) {
    if t.abs() < nu {
        (t * t / (2.0 * nu), t / nu)
    } else {
        (t.abs() - 0.5 * nu, t.signum())
    }
}

/// `(M_ν(t), M_ν'(t))` for `M_ν(t) = min_y ψ(y) + (y - t)²/(2ν)`.
pub fn moreau_envelope_scalar(f: ScalarFn, nu: f64, t: f64) -> Result<(f64, f64)> {
    if !(nu > 0.0) {
        return Err(Error::invalid(format!(
            "smoothing parameter must be positive, got {nu}"
        )));
    }
    Ok(match f {
        ScalarFn::Abs => huber(nu, t),
        ScalarFn::Hinge => {
            let s = 1.0 - t;
            if s <= 0.0 {
                (0.0, 0.0)
            } else if s < nu {
                (s * s / (2.0 * nu), -s / nu)
            } else {
                (s - 0.5 * nu, -1.0)
            }
        }
    })
}

/// A smoothed scalar loss with its Lipschitz and smoothness constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedLoss {
    pub original: ScalarFn,
    pub nu: f64,
}

impl SmoothedLoss {
    pub fn new(original: ScalarFn, nu: f64) -> Result<Self> {
        moreau_envelope_scalar(original, nu, 0.0)?;
        Ok(Self { original, nu })
    }

    pub fn value(&self, t: f64) -> f64 {
        self.eval(t).0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.eval(t).1
    }

    fn eval(&self, t: f64) -> (f64, f64) {
        moreau_envelope_scalar(self.original, self.nu, t).expect("validated at construction")
    }

    pub fn lip(&self) -> f64 {
        self.original.lip()
    }

    pub fn lip_grad(&self) -> f64 {
        1.0 / self.nu
    }
}

/// `ρ(x, x') = |h(x) - h(x') + ⟨g̃, x - x'⟩|`.
pub fn bregman_pseudometric(problem: &CompositeProblem, grad_estimate: &[f64]) -> Pseudometric {
    Pseudometric::LinearizedBregman {
        h: problem.regularizer().clone(),
        grad: grad_estimate.to_vec(),
    }
}

/// `m`, rounded up to the next odd number.
pub fn force_odd(m: usize) -> usize {
    if m.is_multiple_of(2) {
        m + 1
    } else {
        m
    }
}

/// Outcome of [`robust_gap`].
#[derive(Debug, Clone, PartialEq)]
pub struct RobustGapOutput {
    pub point: Vec<f64>,
    /// Index of the returned candidate.
    pub index: usize,
    /// Index of the candidate the gradient was estimated at.
    pub anchor: usize,
    pub grad_estimate: Vec<f64>,
    pub oracle_samples: u64,
    pub gradient_draws: u64,
    /// Trial count after forcing it odd.
    pub m: usize,
}

impl RobustGapOutput {
    pub fn samples(&self) -> u64 {
        self.oracle_samples + self.gradient_draws
    }
}

/// Selection part of [`robust_gap`] on fixed candidates: Euclidean extract,
/// gradient estimate at the lowest-index survivor, extract under the
/// linearized Bregman pseudometric, lowest index in the intersection.
///
/// Returns `(index, anchor, gradient estimate)`.
pub fn select_by_gap<F>(
    problem: &CompositeProblem,
    points: &[Vec<f64>],
    gradient: F,
) -> Result<(usize, usize, Vec<f64>)>
where
    F: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    let first = extract(points, &Pseudometric::Euclidean)?;
    let anchor = first[0];
    let grad = gradient(&points[anchor])?;
    let second = extract(points, &bregman_pseudometric(problem, &grad))?;
    let index = first
        .iter()
        .copied()
        .find(|i| second.binary_search(i).is_ok())
        .ok_or_else(|| Error::Invariant(format!("extract sets do not intersect for m = {}", points.len())))?;
    Ok((index, anchor, grad))
}

/// Draws `m` (forced odd) candidates from `oracle` on `rng.child(i)` and picks
/// one with a small function gap on `problem`. The gradient is estimated to
/// accuracy `κ√(μ eps)` on `rng.child(m)`.
pub fn robust_gap<F>(
    mut oracle: F,
    m: usize,
    eps: f64,
    problem: &CompositeProblem,
    rng: &RngStream,
) -> Result<RobustGapOutput>
where
    F: FnMut(RngStream) -> Result<(Vec<f64>, u64)>,
{
    if m == 0 {
        return Err(Error::invalid("trial count must be positive"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("gap accuracy must be positive, got {eps}")));
    }
    let m = force_odd(m);
    let mut points = Vec::with_capacity(m);
    let mut oracle_samples = 0;
    for i in 0..m {
        let (x, s) = oracle(rng.child(i as u64))?;
        oracle_samples += s;
        points.push(x);
    }
    let grad_eps = problem.condition_number() * (problem.mu() * eps).sqrt();
    let mut draws = 0;
    let (index, anchor, grad_estimate) = select_by_gap(problem, &points, |x_hat| {
        let g = robust_gradient(problem.smooth(), x_hat, grad_eps, m, rng.child(m as u64))?;
        draws = g.draws;
        Ok(g.grad)
    })?;
    Ok(RobustGapOutput {
        point: points.swap_remove(index),
        index,
        anchor,
        grad_estimate,
        oracle_samples,
        gradient_draws: draws,
        m,
    })
}

/// Stage sample size `⌈54ℓ̄²/((μ+λ)δ)⌉`.
pub fn ermc_stage_samples(lip_moment: f64, mu: f64, lambda: f64, delta: f64) -> u64 {
    (54.0 * lip_moment * lip_moment / ((mu + lambda) * delta)).ceil() as u64
}

/// Cleanup accuracy `δ(μ+λ_T)/(222(L+λ_T))`.
pub fn ermc_cleanup_accuracy(delta: f64, mu: f64, lip_grad: f64, lambda_t: f64) -> f64 {
    delta * (mu + lambda_t) / (222.0 * (lip_grad + lambda_t))
}

/// Cleanup sample size `⌈6ℓ̄²/((μ+λ_T)ε)⌉`.
pub fn ermc_cleanup_samples(lip_moment: f64, mu: f64, lambda_t: f64, eps: f64) -> u64 {
    (6.0 * lip_moment * lip_moment / ((mu + lambda_t) * eps)).ceil() as u64
}

/// Continuation for regularized ERM. Stages are robust ERM solves; the
/// cleanup is a [`robust_gap`] over ERM solves of the last subproblem.
pub fn boost_ermc(
    problem: &ErmProblem,
    delta: f64,
    lambdas: &[f64],
    m: usize,
    rng: &RngStream,
) -> Result<(Vec<f64>, StageTrace)> {
    let lm = problem
        .lip_moment()
        .ok_or_else(|| Error::invalid("composite ERM needs the Lipschitz moment"))?;
    if !(delta > 0.0) {
        return Err(Error::invalid("accuracy must be positive"));
    }
    let m = force_odd(m);
    let (mu, lip) = (problem.mu(), problem.lip_grad());
    let t = lambdas.len().saturating_sub(1);
    let schedule = Schedule::new(lambdas.to_vec(), m, delta, implied_failure(t + 3, m), mu)?;
    let composite = problem.composite()?;
    let start = vec![0.0; problem.dim()];
    prox_boost(
        &schedule,
        &start,
        |req, stage_rng| {
            if !req.cleanup {
                let n = ermc_stage_samples(lm, mu, req.lambda, delta);
                let point = erm_r(problem, n, m, req.lambda, req.center, &stage_rng)?;
                return Ok(StageOutput {
                    point,
                    samples: n * m as u64,
                    accuracy: delta,
                    init_bound: None,
                });
            }
            let eps = ermc_cleanup_accuracy(delta, mu, lip, req.lambda);
            let n = ermc_cleanup_samples(lm, mu, req.lambda, eps);
            let sub = composite.proximal(req.lambda, req.center)?;
            let out = robust_gap(
                |child| Ok((erm(problem, n, req.lambda, req.center, child)?, n)),
                m,
                eps,
                &sub,
                &stage_rng,
            )?;
            Ok(StageOutput {
                samples: out.samples(),
                point: out.point,
                accuracy: eps,
                init_bound: None,
            })
        },
        rng,
    )
}

/// Continuation with a proximal streaming oracle where every stage is a
/// [`robust_gap`] call at accuracy `δ/9` and the cleanup at
/// `δ(μ+λ_T)/(74(L+λ_T))`.
pub fn boost_algc(
    alg: &dyn MinimizationOracle,
    problem: &CompositeProblem,
    schedule: &Schedule,
    delta_in: f64,
    x_in: &[f64],
    rng: &RngStream,
) -> Result<(Vec<f64>, StageTrace)> {
    if !(delta_in > 0.0) {
        return Err(Error::invalid(format!(
            "initial gap bound must be positive, got {delta_in}"
        )));
    }
    let delta = schedule.delta;
    let lip = problem.lip_grad();
    prox_boost(
        schedule,
        x_in,
        |req, stage_rng| {
            let init = if req.stage == 0 {
                delta_in
            } else {
                init_bound(schedule, lip, req.stage - 1, 9.0)
            };
            let accuracy = if req.cleanup {
                delta * (schedule.mu + req.lambda) / (74.0 * (lip + req.lambda))
            } else {
                delta / 9.0
            };
            let sub = problem.proximal(req.lambda, req.center)?;
            let q = OracleQuery {
                delta: accuracy,
                lambda: req.lambda,
                delta_init: init,
                center: req.center,
            };
            let out = robust_gap(
                |child| {
                    let o = alg.query(&q, child)?;
                    Ok((o.point, o.samples))
                },
                schedule.m,
                accuracy,
                &sub,
                &stage_rng,
            )?;
            Ok(StageOutput {
                samples: out.samples(),
                point: out.point,
                accuracy,
                init_bound: Some(init),
            })
        },
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{geometric_schedule, Variant};
    use crate::linalg::{dist, norm};
    use crate::oracles::{composite_prox_minimizer, ExactCompositeOracle, ProxSgdOracle};
    use crate::problem::{GradientModel, ProblemInstance};
    use crate::problems::{
        composite_with_truth, make_composite, true_composite_gap, CompositeKind, Noise, QuadraticModel, QuadraticSpec,
        Tail,
    };
    use crate::regularizer::{BoxIndicator, LinearOnHalfLine, Zero};
    use crate::rng::derive_rng;
    use crate::robust::weak_batch_size;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn moreau_fixtures() {
        assert_relative_eq!(moreau_envelope_scalar(ScalarFn::Abs, 1.0, 2.0).unwrap().0, 1.5);
        assert_eq!(moreau_envelope_scalar(ScalarFn::Abs, 1.0, 0.0).unwrap().0, 0.0);
        assert_relative_eq!(moreau_envelope_scalar(ScalarFn::Abs, 0.5, 0.25).unwrap().0, 0.0625);
        assert_eq!(moreau_envelope_scalar(ScalarFn::Hinge, 0.5, 2.0).unwrap(), (0.0, 0.0));
        assert!(moreau_envelope_scalar(ScalarFn::Abs, 0.0, 1.0).is_err());
    }

    #[test]
    fn moreau_sandwich_and_derivative() {
        for f in [ScalarFn::Abs, ScalarFn::Hinge] {
            for nu in [0.1, 1.0, 3.0] {
                let s = SmoothedLoss::new(f, nu).unwrap();
                for k in -400..=400 {
                    let t = k as f64 * 0.0137;
                    let gap = f.eval(t) - s.value(t);
                    assert!(gap >= -1e-15 && gap <= nu * s.lip().powi(2) + 1e-15);
                    let h = 1e-5;
                    let fd = (s.value(t + h) - s.value(t - h)) / (2.0 * h);
                    // First-order error where the second derivative jumps.
                    assert!((fd - s.derivative(t)).abs() <= 1e-8 + h / nu, "{f:?} nu={nu} t={t}");
                }
                assert_eq!(s.lip_grad(), 1.0 / nu);
            }
        }
    }

    fn scalar_quadratic(c: f64, sigma2: f64) -> ProblemInstance {
        let m = QuadraticModel::new(
            DMatrix::from_element(1, 1, 1.0),
            vec![c],
            0.0,
            Noise::new(Tail::Gaussian, sigma2, 1).unwrap(),
        )
        .unwrap();
        ProblemInstance::new(Arc::new(m), 1.0, 1.0, sigma2, None).unwrap()
    }

    fn half_line(sigma2: f64) -> CompositeProblem {
        composite_with_truth(
            scalar_quadratic(-1.0, sigma2),
            Arc::new(BoxIndicator {
                lo: 0.0,
                hi: f64::INFINITY,
            }),
        )
        .unwrap()
    }

    #[test]
    fn pseudometric_fixtures() {
        let p = half_line(0.0);
        let rho = bregman_pseudometric(&p, &[1.0]);
        assert_relative_eq!(rho.eval(&[0.3], &[0.0]), 0.3);
        assert_eq!(rho.eval(&[0.7], &[0.7]), 0.0);
        let lin = CompositeProblem::new(
            scalar_quadratic(0.0, 0.0),
            Arc::new(LinearOnHalfLine { slope: -2.5 }),
            1.0,
            None,
        )
        .unwrap();
        let rho = bregman_pseudometric(&lin, &[0.0]);
        assert_relative_eq!(rho.eval(&[3.0], &[1.0]), 5.0);
    }

    #[test]
    fn gradient_batch_fixture() {
        let eps = 10.0 * (1.0f64 * 0.01).sqrt();
        assert_eq!(weak_batch_size(4.0, eps), 12);
    }

    #[test]
    fn ermc_formula_fixtures() {
        assert_eq!(ermc_stage_samples(2.0, 1.0, 1.0, 0.1), 1080);
        assert_relative_eq!(ermc_cleanup_accuracy(0.1, 1.0, 4.0, 8.0), 0.1 * 9.0 / (222.0 * 12.0));
        assert!((ermc_cleanup_accuracy(0.1, 1.0, 4.0, 8.0) - 3.378e-4).abs() < 1e-7);
        assert_eq!(Variant::BoostErmc.trial_count(3, 0.05), 87);
        assert_eq!(force_odd(128), 129);
        assert_eq!(force_odd(87), 87);
    }

    #[test]
    fn noiseless_oracle_returns_minimizer() {
        let p = half_line(0.0);
        let out = robust_gap(|_| Ok((vec![0.0], 1)), 5, 0.01, &p, &derive_rng(0, &[])).unwrap();
        assert_eq!(out.point, vec![0.0]);
        assert_eq!(p.gap(&out.point).unwrap(), 0.0);
        assert_eq!(p.bregman_gap(&out.point).unwrap(), 0.0);
        assert_eq!(out.oracle_samples, 5);
    }

    #[test]
    fn constructed_majority_fixture() {
        let eps = 0.01;
        let p = half_line(1e-4);
        // Gap of x >= 0 is x + x²/2; the first four are within eps.
        let cands = [0.004, 0.009, 0.0, 0.002, 0.5, 2.0, 0.3];
        let out = robust_gap(
            |r| Ok((vec![cands[r.path()[0] as usize]], 0)),
            7,
            eps,
            &p,
            &derive_rng(1, &[]),
        )
        .unwrap();
        assert!(out.point[0].abs() <= 3.0 * (2.0 * eps).sqrt());
        assert!(p.gap(&out.point).unwrap() <= 74.0 * eps);
        assert!(out.index < 4);
    }

    #[test]
    fn intersection_is_nonempty_for_odd_m() {
        let p = half_line(0.0);
        let mut rng = derive_rng(2, &[]);
        for m in [1usize, 3, 5, 9, 15] {
            for _ in 0..50 {
                let pts: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.uniform() * 3.0]).collect();
                let g = vec![rng.uniform() * 4.0 - 2.0];
                assert!(select_by_gap(&p, &pts, |_| Ok(g.clone())).is_ok());
            }
        }
    }

    fn box_problem(seed: u64, kappa: f64) -> CompositeProblem {
        let spec = QuadraticSpec {
            dim: 2,
            mu: 1.0,
            lip_grad: kappa,
            sigma2: 0.0,
            tail: Tail::Gaussian,
        };
        make_composite(&spec, CompositeKind::Box { lo: -1.0, hi: 1.0 }, seed).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gap_selection_meets_its_bounds(
            seed in 0u64..1000,
            kappa in 1.0f64..10.0,
            eps in 1e-4f64..1e-1,
            half in 1usize..5,
            extra in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4),
            shifts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 5),
            gnoise in (-1.0f64..1.0, -1.0f64..1.0),
        ) {
            let p = box_problem(seed, kappa);
            let gt = p.ground_truth().unwrap().clone();
            let m = 2 * half + 1;
            let good = half + 1;
            let mut pts = Vec::new();
            for (a, b) in shifts.iter().take(good) {
                // Shrink toward x̄ until the gap is at most eps.
                let mut s = 1.0;
                loop {
                    let x = p.prox(&[gt.minimizer[0] + s * a, gt.minimizer[1] + s * b], 1.0);
                    if p.gap(&x).unwrap() <= eps {
                        pts.push(x);
                        break;
                    }
                    s *= 0.5;
                }
            }
            for (a, b) in extra.iter().take(m - good) {
                pts.push(vec![*a, *b]);
            }
            // Interleave so good points are not simply the lowest indices.
            pts.rotate_left(half);
            let (mu, kap) = (p.mu(), p.condition_number());
            let radius = 3.0 * kap * (mu * eps).sqrt();
            let (idx, _, _) = select_by_gap(&p, &pts, |x_hat| {
                let g = p.smooth().grad(x_hat);
                let n = (gnoise.0 * gnoise.0 + gnoise.1 * gnoise.1).sqrt().max(1e-12);
                Ok(vec![g[0] + radius * gnoise.0 / n * 0.999, g[1] + radius * gnoise.1 / n * 0.999])
            }).unwrap();
            let x = &pts[idx];
            let tol = 1e-9;
            prop_assert!(dist(x, &gt.minimizer) <= 3.0 * (2.0 * eps / mu).sqrt() + tol);
            prop_assert!(p.bregman_gap(x).unwrap() <= 65.0 * kap * eps + tol);
            prop_assert!(p.gap(x).unwrap() <= 74.0 * kap * eps + tol);
        }
    }

    #[test]
    fn algc_with_exact_oracle_is_deterministic_success() {
        let p = box_problem(3, 8.0);
        let s = geometric_schedule(1.0, 8.0, 1e-3, 0.1, Variant::BoostAlgc).unwrap();
        let x0 = vec![0.0, 0.0];
        let d0 = true_composite_gap(&p, &x0).unwrap();
        let (x, trace) = boost_algc(&ExactCompositeOracle(p.clone()), &p, &s, d0, &x0, &derive_rng(0, &[])).unwrap();
        assert!(true_composite_gap(&p, &x).unwrap() <= s.delta * s.bound_factor());
        assert_eq!(trace.len(), s.t() + 2);
        assert_eq!(s.m % 2, 1);
    }

    #[test]
    fn algc_with_prox_sgd_reaches_target() {
        let spec = QuadraticSpec {
            dim: 3,
            mu: 1.0,
            lip_grad: 4.0,
            sigma2: 0.5,
            tail: Tail::Gaussian,
        };
        let p = make_composite(&spec, CompositeKind::Ball { radius: 1.0 }, 5).unwrap();
        let eps = 0.05;
        let s = geometric_schedule(1.0, 4.0, eps, 0.2, Variant::BoostAlgc).unwrap();
        let x0 = vec![0.0; 3];
        let d0 = true_composite_gap(&p, &x0).unwrap();
        let (x, trace) = boost_algc(&ProxSgdOracle(p.clone()), &p, &s, d0, &x0, &derive_rng(4, &[])).unwrap();
        assert!(true_composite_gap(&p, &x).unwrap() <= eps);
        assert!(trace.total_samples() > 0);
        let exact = composite_prox_minimizer(&p, 0.0, &x0, 1e-12).unwrap();
        assert!(dist(&exact, &p.ground_truth().unwrap().minimizer) < 1e-9);
    }

    #[test]
    fn ermc_runs_and_stays_feasible() {
        let spec = crate::erm::ErmSpec {
            dim: 3,
            n_pop: 256,
            mu: 1.0,
            lip_grad: 4.0,
            lip_grad_hat: 8.0,
            residual: 1.0,
            n_min: None,
        };
        let p = crate::erm::make_composite_erm(&spec, 1.0, 1.0, 1).unwrap();
        let eps = 0.5;
        let s = geometric_schedule(1.0, 4.0, eps, 0.3, Variant::BoostErmc).unwrap();
        let (x, trace) = boost_ermc(&p, s.delta, &s.lambdas, s.m, &derive_rng(2, &[])).unwrap();
        assert!(norm(&x) <= 1.0 + 1e-12);
        assert!(p.gap(&x) <= eps);
        let lm = p.lip_moment().unwrap();
        let m = force_odd(s.m) as u64;
        assert_eq!(
            trace.stages[0].samples_used,
            m * ermc_stage_samples(lm, 1.0, 0.0, s.delta)
        );
        let _ = (
            Zero,
            GradientModel::dim(
                &QuadraticModel::new(DMatrix::from_element(1, 1, 1.0), vec![0.0], 0.0, Noise::none(1)).unwrap(),
            ),
        );
    }
}
