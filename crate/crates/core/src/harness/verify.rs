//! Deterministic property suites run by `proxboost verify`.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::composite::{moreau_envelope_scalar, select_by_gap, ScalarFn};
use crate::engine::{
    boost_alg_call_count, boost_alg_delta_cap, error_decomposition, geometric_schedule, init_bound, Variant,
};
use crate::error::Result;
use crate::linalg::{dist, norm};
use crate::problem::{two_sided_slack, CompositeProblem};
use crate::problems::{make_composite, make_quadratic, CompositeKind, QuadraticSpec, Tail};
use crate::regularizer::L1;
use crate::rng::{derive_rng, RngStream};
use crate::robust::{extract, robust_select, Pseudometric};

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: u64,
    pub violations: u64,
    /// Largest violation margin seen (or the suite's headline error).
    pub worst: f64,
    pub elapsed_ms: u64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(u64, u64, f64)>) -> Result<SuiteReport> {
    let clock = Instant::now();
    let (cases, violations, worst) = f()?;
    Ok(SuiteReport {
        name,
        cases,
        violations,
        worst,
        elapsed_ms: clock.elapsed().as_millis() as u64,
    })
}

fn uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

fn random_vec(rng: &mut RngStream, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| uniform(rng, -scale, scale)).collect()
}

/// A point within `eps` of `c` under `rho`: a random direction, halved
/// until close enough.
fn near(rng: &mut RngStream, c: &[f64], eps: f64, rho: &Pseudometric) -> Vec<f64> {
    let v = random_vec(rng, c.len(), 1.0);
    let mut s = 4.0 * eps * rng.uniform() / norm(&v).max(1e-12);
    loop {
        let x: Vec<f64> = c.iter().zip(&v).map(|(a, b)| a + s * b).collect();
        if rho.eval(&x, c) <= eps {
            return x;
        }
        s *= 0.5;
    }
}

/// Robust selection on planted majorities: the selected point and every
/// extracted point lie within `3ε` of the planted center, under the
/// Euclidean, scaled Euclidean and linearized Bregman pseudometrics.
pub fn robust_selection_suite(instances: u64, seed: u64) -> Result<SuiteReport> {
    timed("robust selection", || {
        let mut violations = 0;
        let mut worst = 0.0f64;
        for k in 0..instances {
            let mut rng = derive_rng(seed, &[k]);
            let m = [3usize, 5, 7, 9][(k % 4) as usize];
            let d = 1 + (rng.uniform() * 3.0) as usize % 3;
            let eps = 10f64.powf(uniform(&mut rng, -3.0, 0.0));
            let c = random_vec(&mut rng, d, 2.0);
            let rhos = [
                Pseudometric::Euclidean,
                Pseudometric::ScaledEuclidean(10f64.powf(uniform(&mut rng, -1.0, 1.0))),
                Pseudometric::LinearizedBregman {
                    h: Arc::new(L1 {
                        weight: uniform(&mut rng, 0.0, 2.0),
                    }),
                    grad: random_vec(&mut rng, d, 2.0),
                },
            ];
            for rho in &rhos {
                let good = m / 2 + 1;
                let mut pts: Vec<Vec<f64>> = (0..good).map(|_| near(&mut rng, &c, eps, rho)).collect();
                for _ in good..m {
                    // Outliers: some just outside the cluster, some far away.
                    let scale = if rng.uniform() < 0.5 { 5.0 * eps } else { 10.0 };
                    pts.push(c.iter().map(|a| a + uniform(&mut rng, -scale, scale)).collect());
                }
                let shift = (rng.uniform() * m as f64) as usize % m;
                pts.rotate_left(shift);
                let (_, chosen) = robust_select(&pts, rho)?;
                let mut dists = vec![rho.eval(&chosen, &c)];
                dists.extend(extract(&pts, rho)?.into_iter().map(|i| rho.eval(&pts[i], &c)));
                for r in dists {
                    let excess = r - 3.0 * eps;
                    if excess > 1e-12 * (1.0 + eps) {
                        violations += 1;
                        worst = worst.max(excess);
                    }
                }
            }
        }
        Ok((instances, violations, worst))
    })
}

/// The three inexact proximal point inequalities on random quadratics with
/// random centers and amplitudes, plus the two-sided gap bound at every
/// center. Slack must be at least `-1e-9`.
pub fn decomposition_suite(instances: u64, seed: u64) -> Result<SuiteReport> {
    timed("proximal point inequalities", || {
        let mut violations = 0;
        let mut worst = 0.0f64;
        for k in 0..instances {
            let mut rng = derive_rng(seed, &[k]);
            let d = 1 + (rng.uniform() * 10.0) as usize % 10;
            let mu = 10f64.powf(uniform(&mut rng, -1.0, 1.0));
            let kappa = 10f64.powf(uniform(&mut rng, 0.0, 3.0));
            let spec = QuadraticSpec {
                dim: d,
                mu,
                lip_grad: mu * kappa,
                sigma2: 0.0,
                tail: Tail::Gaussian,
            };
            let problem = make_quadratic(&spec, k ^ seed)?;
            let xbar = problem
                .ground_truth()
                .expect("quadratics carry ground truth")
                .minimizer
                .clone();
            let t = (rng.uniform() * 7.0) as usize % 7;
            let mut lambdas = Vec::with_capacity(t + 1);
            let mut lam = mu * uniform(&mut rng, 0.1, 2.0);
            for _ in 0..=t {
                lambdas.push(lam);
                lam *= uniform(&mut rng, 1.1, 4.0);
            }
            let points: Vec<Vec<f64>> = (0..t + 2)
                .map(|_| {
                    let s = 10f64.powf(uniform(&mut rng, -3.0, 0.5));
                    xbar.iter().map(|x| x + s * uniform(&mut rng, -1.0, 1.0)).collect()
                })
                .collect();
            let report = error_decomposition(&problem, &lambdas, &points)?;
            let mut slacks: Vec<f64> = report
                .rows
                .iter()
                .flat_map(|r| [r.optimal_value, r.progress, r.smooth])
                .collect();
            for x in &points {
                let (lo, hi) = two_sided_slack(&problem, x)?;
                slacks.extend([lo, hi]);
            }
            for s in slacks {
                if s < -1e-9 {
                    violations += 1;
                    worst = worst.max(-s);
                }
            }
        }
        Ok((instances, violations, worst))
    })
}

/// Geometric schedule arithmetic for `κ = 2^0..2^20`: the bound factor, the
/// cleanup ratio, the initialization-bound cap and the oracle call count.
pub fn schedule_suite() -> Result<SuiteReport> {
    timed("schedule arithmetic", || {
        let (mu, eps, p) = (1.0, 1.0, 0.1);
        let mut cases = 0;
        let mut violations = 0;
        let mut worst = 0.0f64;
        let mut check = |ok: bool, margin: f64| {
            cases += 1;
            if !ok {
                violations += 1;
                worst = worst.max(margin.abs());
            }
        };
        for k in 0..=20 {
            let kappa = 2f64.powi(k);
            let lip = mu * kappa;
            let s = geometric_schedule(mu, lip, eps, p, Variant::BoostAlg)?;
            let t = s.t();
            check(t == k as usize, (t as f64) - k as f64);
            let factor = s.bound_factor();
            check(factor <= 2.0 + 2.0 * t as f64 + 1e-12, factor - (2.0 + 2.0 * t as f64));
            let lam_t = s.lambdas[t];
            let ratio = (lip + lam_t) / (mu + lam_t);
            check(ratio <= 2.0 + 1e-12, ratio - 2.0);
            let cap = boost_alg_delta_cap(kappa, eps);
            let expected_cap = (kappa + 1.0 + 2.0 * t as f64) * s.delta;
            check((cap - expected_cap).abs() <= 1e-12 * cap, cap - expected_cap);
            for j in 0..=t + 1 {
                let b = init_bound(&s, lip, j, 1.0);
                check(b <= cap * (1.0 + 1e-12), b - cap);
            }
            let calls = boost_alg_call_count(kappa, p);
            let stages = t + 2;
            let expected_calls = (18.0 * (stages as f64 / p).ln()).ceil() as usize * stages;
            check(
                calls == expected_calls && calls == s.m * stages,
                calls as f64 - expected_calls as f64,
            );
        }
        Ok((cases, violations, worst))
    })
}

/// Gap selection on planted majorities over 1-D and 2-D composite problems
/// with gradient error just inside `3κ√(με)`: distance, Bregman gap and
/// function gap stay within `3√(2ε/μ)`, `65κε` and `74κε`.
pub fn gap_selection_suite(instances: u64, seed: u64) -> Result<SuiteReport> {
    timed("gap selection constants", || {
        let mut violations = 0;
        let mut worst = 0.0f64;
        let mut problems: Vec<CompositeProblem> = Vec::new();
        for (i, kind) in [
            CompositeKind::Ball { radius: 1.0 },
            CompositeKind::Box { lo: -1.0, hi: 1.0 },
            CompositeKind::L1 { weight: 0.3 },
        ]
        .into_iter()
        .enumerate()
        {
            for dim in [1, 2] {
                for kappa in [1.0, 4.0, 10.0] {
                    let spec = QuadraticSpec {
                        dim,
                        mu: 1.0,
                        lip_grad: kappa,
                        sigma2: 0.0,
                        tail: Tail::Gaussian,
                    };
                    problems.push(make_composite(&spec, kind, seed ^ (i as u64 * 31 + dim as u64))?);
                }
            }
        }
        for k in 0..instances {
            let mut rng = derive_rng(seed, &[k]);
            let p = &problems[(k as usize) % problems.len()];
            let gt = p
                .ground_truth()
                .expect("generated composites carry ground truth")
                .clone();
            let d = p.dim();
            let eps = 10f64.powf(uniform(&mut rng, -4.0, -1.0));
            let half = 1 + (k as usize / problems.len()) % 4;
            let m = 2 * half + 1;
            let mut pts = Vec::with_capacity(m);
            for _ in 0..=half {
                let v = random_vec(&mut rng, d, 1.0);
                let mut s = 1.0;
                loop {
                    let y: Vec<f64> = gt.minimizer.iter().zip(&v).map(|(a, b)| a + s * b).collect();
                    let x = if p.regularizer().value(&y).is_finite() {
                        y
                    } else {
                        p.prox(&y, 1.0)
                    };
                    if p.gap(&x)? <= eps {
                        pts.push(x);
                        break;
                    }
                    s *= 0.5;
                }
            }
            for _ in half + 1..m {
                let y = random_vec(&mut rng, d, 2.0);
                pts.push(p.prox(&y, 1.0));
            }
            let shift = (rng.uniform() * m as f64) as usize % m;
            pts.rotate_left(shift);
            let (mu, kap) = (p.mu(), p.condition_number());
            let radius = 3.0 * kap * (mu * eps).sqrt();
            let noise = random_vec(&mut rng, d, 1.0);
            let nn = norm(&noise).max(1e-12);
            let (idx, _, _) = select_by_gap(p, &pts, |x_hat| {
                let g = p.smooth().grad(x_hat);
                Ok(g.iter().zip(&noise).map(|(a, b)| a + 0.999 * radius * b / nn).collect())
            })?;
            let x = &pts[idx];
            let tol = 1e-9;
            let margins = [
                dist(x, &gt.minimizer) - 3.0 * (2.0 * eps / mu).sqrt(),
                p.bregman_gap(x)? - 65.0 * kap * eps,
                p.gap(x)? - 74.0 * kap * eps,
            ];
            for e in margins {
                if e > tol {
                    violations += 1;
                    worst = worst.max(e);
                }
            }
        }
        Ok((instances, violations, worst))
    })
}

/// Moreau envelopes of `|t|` and the hinge on a cell-centred grid of
/// `points` over `[-2, 2]` for `ν ∈ {0.01, 0.1, 1}`: the sandwich
/// `0 ≤ ψ - M_ν ≤ ν·lip²` and the derivative against central differences
/// with step `1e-4` (error at most `1e-6`). `worst` is the largest
/// derivative error.
///
/// The grid is offset by half a cell so that no stencil straddles a kink of
/// the envelope's derivative; there the difference quotient is only first
/// order accurate.
pub fn moreau_suite(points: usize) -> Result<SuiteReport> {
    timed("moreau envelope", || {
        let h = 1e-4;
        let width = 4.0 / points as f64;
        let mut cases = 0;
        let mut violations = 0;
        let mut worst = 0.0f64;
        for f in [ScalarFn::Abs, ScalarFn::Hinge] {
            for nu in [0.01, 0.1, 1.0] {
                let bound = nu * f.lip() * f.lip();
                for i in 0..points {
                    let t = -2.0 + width * (i as f64 + 0.5);
                    let (m, dm) = moreau_envelope_scalar(f, nu, t)?;
                    let gap = f.eval(t) - m;
                    let fd =
                        (moreau_envelope_scalar(f, nu, t + h)?.0 - moreau_envelope_scalar(f, nu, t - h)?.0) / (2.0 * h);
                    let err = (fd - dm).abs();
                    worst = worst.max(err);
                    cases += 1;
                    if gap < -1e-15 || gap > bound + 1e-15 || err > 1e-6 {
                        violations += 1;
                    }
                }
            }
        }
        Ok((cases, violations, worst))
    })
}

/// All deterministic suites at full size.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        robust_selection_suite(10_000, seed)?,
        decomposition_suite(1_000, seed)?,
        schedule_suite()?,
        gap_selection_suite(1_000, seed)?,
        moreau_suite(10_000)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_at_small_size() {
        for r in [
            robust_selection_suite(200, 1).unwrap(),
            decomposition_suite(50, 1).unwrap(),
            schedule_suite().unwrap(),
            gap_selection_suite(100, 1).unwrap(),
            moreau_suite(10_000).unwrap(),
        ] {
            assert!(r.passed(), "{r:?}");
            assert!(r.cases > 0);
        }
    }

    #[test]
    fn moreau_grid_avoids_kinks_only_by_offset() {
        // On a grid through the kinks the difference quotient is first order.
        let (nu, h) = (0.01, 1e-4);
        let f = ScalarFn::Abs;
        let fd = (moreau_envelope_scalar(f, nu, nu + h).unwrap().0 - moreau_envelope_scalar(f, nu, nu - h).unwrap().0)
            / (2.0 * h);
        assert!((fd - 1.0).abs() > 1e-6);
        assert!(moreau_suite(10_000).unwrap().passed());
    }
}
