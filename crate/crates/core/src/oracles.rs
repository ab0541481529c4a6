//! Minimization oracles for proximal subproblems and the deterministic
//! inner solver.
//!
//! The stochastic oracles target an expected gap of `δ/3` on
//! `φ(y) = g(y) + λ/2 |y - center|^2 + h(y)`, so Markov's inequality gives
//! `P(φ(y) - min φ <= δ) >= 2/3`.

use std::sync::Arc;

use crate::engine::{MinimizationOracle, OracleOutput, OracleQuery};
use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot, norm};
use crate::problem::{CompositeProblem, GradientModel, ProblemInstance, ProxShifted};
use crate::regularizer::{Regularizer, Zero};
use crate::rng::RngStream;

/// Distance-to-target ratio at which the SGD oracle switches from last-iterate
/// contraction to iterate averaging. Minimizes the noise-dominated cost.
const SWITCH_RATIO: f64 = 2.354_820_045_030_949; // sqrt(4 ln 4)

/// Constants of the subproblem an oracle runs on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubproblemConstants {
    pub mu: f64,
    pub lip_grad: f64,
    pub sigma2: f64,
}

/// A constant-step phase: `iters` steps of size `eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epoch {
    pub eta: f64,
    pub iters: u64,
}

/// Step sizes and lengths used by [`sgd_oracle`], fixed before any sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdPlan {
    /// Last-iterate epochs, each halving the expected squared distance.
    pub contraction: Vec<Epoch>,
    /// Final averaged run.
    pub averaging: Epoch,
}

impl SgdPlan {
    pub fn samples(&self) -> u64 {
        self.contraction.iter().map(|e| e.iters).sum::<u64>() + self.averaging.iters
    }
}

fn check_query(delta: f64, delta_init: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("oracle accuracy must be positive, got {delta}")));
    }
    if !(delta_init >= 0.0 && delta_init.is_finite()) {
        return Err(Error::invalid(format!(
            "initial gap bound must be finite and nonnegative, got {delta_init}"
        )));
    }
    Ok(())
}

/// Plan for expected gap `delta/3` from an initial gap at most `delta_init`.
///
/// Contraction epochs use `η = min(1/L, μR/(4σ²))` and `⌈ln 4/(ημ)⌉` steps,
/// taking the expected squared distance bound `R` from `2Δ/μ` to at most
/// `c·g/μ` with `g = δ/3`. The averaged phase then uses
/// `η = min(1/L, g/(2σ²))` and `⌈R/(ηg)⌉` steps, so that
/// `R/(2ηN) + ησ² <= g`.
pub fn sgd_plan(c: SubproblemConstants, delta: f64, delta_init: f64) -> Result<SgdPlan> {
    check_query(delta, delta_init)?;
    let g = delta / 3.0;
    let mut r = 2.0 * delta_init / c.mu;
    let mut contraction = Vec::new();
    while r > SWITCH_RATIO * g / c.mu {
        let eta = step(c.lip_grad, c.mu * r / (4.0 * c.sigma2));
        contraction.push(Epoch {
            eta,
            iters: (4f64.ln() / (eta * c.mu)).ceil() as u64,
        });
        r /= 2.0;
    }
    let eta = step(c.lip_grad, g / (2.0 * c.sigma2));
    let averaging = Epoch {
        eta,
        iters: ((r / (eta * g)).ceil() as u64).max(1),
    };
    Ok(SgdPlan { contraction, averaging })
}

fn step(lip: f64, noise_limited: f64) -> f64 {
    let base = 1.0 / lip;
    if noise_limited.is_finite() {
        base.min(noise_limited)
    } else {
        base
    }
}

/// Restarted Nesterov epochs used by [`acc_sgd_oracle`].
///
/// Each epoch halves an expected gap bound `R`, starting from `Δ` and ending
/// at `δ/3`, with `η = min(1/L, μR²/(16σ⁴))`, momentum `(1-q)/(1+q)` for
/// `q = √(ημ)`, and `⌈ln 8/q⌉` steps.
pub fn acc_plan(c: SubproblemConstants, delta: f64, delta_init: f64) -> Result<Vec<Epoch>> {
    check_query(delta, delta_init)?;
    let g = delta / 3.0;
    let mut r = delta_init;
    let mut epochs = Vec::new();
    loop {
        let eta = step(c.lip_grad, c.mu * r * r / (16.0 * c.sigma2 * c.sigma2));
        let q = (eta * c.mu).sqrt().min(1.0);
        epochs.push(Epoch {
            eta,
            iters: (8f64.ln() / q).ceil() as u64,
        });
        r /= 2.0;
        if r <= g {
            break;
        }
    }
    Ok(epochs)
}

#[allow(clippy::too_many_arguments)]
fn prox_step(
    model: &dyn GradientModel,
    h: &dyn Regularizer,
    eta: f64,
    x: &mut [f64],
    from: &[f64],
    grad: &mut [f64],
    buf: &mut [f64],
    rng: &mut RngStream,
) {
    model.stoch_grad(from, rng, grad);
    for ((b, f), g) in buf.iter_mut().zip(from).zip(grad.iter()) {
        *b = f - eta * g;
    }
    h.prox(buf, eta, x);
}

fn run_sgd(
    model: &dyn GradientModel,
    h: &dyn Regularizer,
    plan: &SgdPlan,
    start: &[f64],
    mut rng: RngStream,
) -> Vec<f64> {
    let d = start.len();
    let mut x = start.to_vec();
    let mut from = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut buf = vec![0.0; d];
    for e in &plan.contraction {
        for _ in 0..e.iters {
            from.copy_from_slice(&x);
            prox_step(model, h, e.eta, &mut x, &from, &mut grad, &mut buf, &mut rng);
        }
    }
    let mut avg = vec![0.0; d];
    let e = plan.averaging;
    for _ in 0..e.iters {
        from.copy_from_slice(&x);
        prox_step(model, h, e.eta, &mut x, &from, &mut grad, &mut buf, &mut rng);
        for (a, xi) in avg.iter_mut().zip(&x) {
            *a += xi;
        }
    }
    for a in &mut avg {
        *a /= e.iters as f64;
    }
    avg
}

fn run_acc(
    model: &dyn GradientModel,
    h: &dyn Regularizer,
    mu: f64,
    epochs: &[Epoch],
    start: &[f64],
    mut rng: RngStream,
) -> Vec<f64> {
    let d = start.len();
    let mut x = start.to_vec();
    let mut prev = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut buf = vec![0.0; d];
    for e in epochs {
        let q = (e.eta * mu).sqrt().min(1.0);
        let beta = (1.0 - q) / (1.0 + q);
        prev.copy_from_slice(&x);
        for _ in 0..e.iters {
            for ((yi, xi), pi) in y.iter_mut().zip(&x).zip(&prev) {
                *yi = xi + beta * (xi - pi);
            }
            prev.copy_from_slice(&x);
            prox_step(model, h, e.eta, &mut x, &y, &mut grad, &mut buf, &mut rng);
        }
    }
    x
}

fn shifted(model: &Arc<dyn GradientModel>, lambda: f64, center: &[f64]) -> ProxShifted {
    ProxShifted {
        inner: model.clone(),
        lambda,
        center: center.to_vec(),
    }
}

fn constants(problem: &ProblemInstance, lambda: f64) -> SubproblemConstants {
    SubproblemConstants {
        mu: problem.mu() + lambda,
        lip_grad: problem.lip_grad() + lambda,
        sigma2: problem.sigma2(),
    }
}

/// Restarted stochastic gradient descent with a final averaged phase.
pub fn sgd_oracle(
    problem: &ProblemInstance,
    delta: f64,
    lambda: f64,
    delta_init: f64,
    center: &[f64],
    rng: RngStream,
) -> Result<(Vec<f64>, u64)> {
    let plan = sgd_plan(constants(problem, lambda), delta, delta_init)?;
    let model = shifted(problem.model(), lambda, center);
    Ok((run_sgd(&model, &Zero, &plan, center, rng), plan.samples()))
}

/// Restarted Nesterov-accelerated stochastic gradient descent.
pub fn acc_sgd_oracle(
    problem: &ProblemInstance,
    delta: f64,
    lambda: f64,
    delta_init: f64,
    center: &[f64],
    rng: RngStream,
) -> Result<(Vec<f64>, u64)> {
    let c = constants(problem, lambda);
    let epochs = acc_plan(c, delta, delta_init)?;
    let model = shifted(problem.model(), lambda, center);
    let samples = epochs.iter().map(|e| e.iters).sum();
    Ok((run_acc(&model, &Zero, c.mu, &epochs, center, rng), samples))
}

/// [`sgd_oracle`] with every step followed by the proximal map of `h`.
pub fn prox_sgd_oracle(
    problem: &CompositeProblem,
    delta: f64,
    lambda: f64,
    delta_init: f64,
    center: &[f64],
    rng: RngStream,
) -> Result<(Vec<f64>, u64)> {
    let plan = sgd_plan(constants(problem.smooth(), lambda), delta, delta_init)?;
    let model = shifted(problem.smooth().model(), lambda, center);
    let h = problem.regularizer().as_ref();
    Ok((run_sgd(&model, h, &plan, center, rng), plan.samples()))
}

#[derive(Debug, Clone)]
pub struct SgdOracle(pub ProblemInstance);

#[derive(Debug, Clone)]
pub struct AccSgdOracle(pub ProblemInstance);

#[derive(Debug, Clone)]
pub struct ProxSgdOracle(pub CompositeProblem);

/// Returns the exact proximal minimizer of a quadratic problem; uses no samples.
#[derive(Debug, Clone)]
pub struct ExactOracle(pub ProblemInstance);

/// Returns the proximal minimizer of a composite problem computed by
/// [`deterministic_solve`]; uses no samples.
#[derive(Debug, Clone)]
pub struct ExactCompositeOracle(pub CompositeProblem);

impl MinimizationOracle for SgdOracle {
    fn query(&self, q: &OracleQuery<'_>, rng: RngStream) -> Result<OracleOutput> {
        let (point, samples) = sgd_oracle(&self.0, q.delta, q.lambda, q.delta_init, q.center, rng)?;
        Ok(OracleOutput { point, samples })
    }

    fn name(&self) -> &str {
        "sgd"
    }
}

impl MinimizationOracle for AccSgdOracle {
    fn query(&self, q: &OracleQuery<'_>, rng: RngStream) -> Result<OracleOutput> {
        let (point, samples) = acc_sgd_oracle(&self.0, q.delta, q.lambda, q.delta_init, q.center, rng)?;
        Ok(OracleOutput { point, samples })
    }

    fn name(&self) -> &str {
        "acc-sgd"
    }
}

impl MinimizationOracle for ProxSgdOracle {
    fn query(&self, q: &OracleQuery<'_>, rng: RngStream) -> Result<OracleOutput> {
        let (point, samples) = prox_sgd_oracle(&self.0, q.delta, q.lambda, q.delta_init, q.center, rng)?;
        Ok(OracleOutput { point, samples })
    }

    fn name(&self) -> &str {
        "prox-sgd"
    }
}

impl MinimizationOracle for ExactOracle {
    fn query(&self, q: &OracleQuery<'_>, _rng: RngStream) -> Result<OracleOutput> {
        let sub = self.0.proximal(q.lambda, q.center)?;
        let gt = sub
            .ground_truth()
            .ok_or(Error::MissingGroundTruth("closed-form proximal minimizer"))?;
        Ok(OracleOutput {
            point: gt.minimizer.clone(),
            samples: 0,
        })
    }

    fn name(&self) -> &str {
        "exact"
    }
}

impl MinimizationOracle for ExactCompositeOracle {
    fn query(&self, q: &OracleQuery<'_>, _rng: RngStream) -> Result<OracleOutput> {
        let point = composite_prox_minimizer(&self.0, q.lambda, q.center, 1e-12)?;
        Ok(OracleOutput { point, samples: 0 })
    }

    fn name(&self) -> &str {
        "exact-composite"
    }
}

/// `argmin_y g(y) + λ/2 |y - center|^2 + h(y)` to gradient-mapping tolerance
/// `tol·(μ+λ)·(1+|center|)`.
pub fn composite_prox_minimizer(problem: &CompositeProblem, lambda: f64, center: &[f64], tol: f64) -> Result<Vec<f64>> {
    let model = shifted(problem.smooth().model(), lambda, center);
    let mu = problem.mu() + lambda;
    let scale = mu * (1.0 + norm(center));
    deterministic_solve(
        |x, g| {
            model.grad(x, g);
            model.value(x)
        },
        problem.regularizer().as_ref(),
        center,
        mu,
        problem.lip_grad() + lambda,
        tol * scale,
        100_000,
    )
}

/// Accelerated proximal gradient with backtracking and gradient restarts.
///
/// `value_grad` writes `∇g(x)` and returns `g(x)`. Stops once the gradient
/// mapping `L(x - prox_{h/L}(x - ∇g(x)/L))` has norm at most `tol`.
pub fn deterministic_solve<F>(
    mut value_grad: F,
    h: &dyn Regularizer,
    x0: &[f64],
    mu: f64,
    lip_hint: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    if !(tol > 0.0) {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    let d = x0.len();
    let mut lip = if lip_hint > 0.0 && lip_hint.is_finite() {
        lip_hint
    } else {
        1.0
    };
    let mut grad = vec![0.0; d];
    let mut trial = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut tgrad = vec![0.0; d];

    // One backtracked proximal step from `y`; returns the accepted step point.
    let mut step_from = |y: &[f64], gy: f64, grad: &[f64], lip: &mut f64, out: &mut [f64], vg: &mut F| -> f64 {
        loop {
            for ((b, yi), gi) in buf.iter_mut().zip(y).zip(grad) {
                *b = yi - gi / *lip;
            }
            h.prox(&buf, 1.0 / *lip, out);
            let gt = vg(out, &mut tgrad);
            let diff: Vec<f64> = out.iter().zip(y).map(|(a, b)| a - b).collect();
            let model = gy + dot(grad, &diff) + 0.5 * *lip * dot(&diff, &diff);
            if gt <= model + 1e-12 * (1.0 + gy.abs()) || *lip > 1e300 {
                return gt;
            }
            *lip *= 2.0;
        }
    };

    let mut x = x0.to_vec();
    let mut y = x0.to_vec();
    let gx = value_grad(&x, &mut grad);
    let gmap = |a: &[f64], b: &[f64], l: f64| l * dist_sq(a, b).sqrt();
    step_from(&x, gx, &grad, &mut lip, &mut trial, &mut value_grad);
    let mut residual = gmap(&x, &trial, lip);
    if residual <= tol {
        return Ok(x);
    }
    let mut x_next = vec![0.0; d];
    for _ in 0..max_iter {
        let gy = value_grad(&y, &mut grad);
        step_from(&y, gy, &grad, &mut lip, &mut x_next, &mut value_grad);
        let moved = gmap(&y, &x_next, lip);
        if moved <= 0.5 * tol {
            let gn = value_grad(&x_next, &mut grad);
            step_from(&x_next, gn, &grad, &mut lip, &mut trial, &mut value_grad);
            residual = gmap(&x_next, &trial, lip);
            if residual <= tol {
                return Ok(x_next);
            }
        } else {
            residual = moved;
        }
        // Restart when the step opposes the momentum direction.
        let restart = y
            .iter()
            .zip(&x_next)
            .zip(&x)
            .map(|((yi, xn), xi)| (yi - xn) * (xn - xi))
            .sum::<f64>()
            > 0.0;
        let q = (mu / lip).sqrt().min(1.0);
        let beta = if restart { 0.0 } else { (1.0 - q) / (1.0 + q) };
        for i in 0..d {
            y[i] = x_next[i] + beta * (x_next[i] - x[i]);
        }
        x.copy_from_slice(&x_next);
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
    })
}
