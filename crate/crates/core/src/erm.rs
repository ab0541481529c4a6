//! Empirical risk minimization over a finite synthetic population, its robust
//! form, and the continuation driver built on top of them.
//!
//! The population is `n_pop` pairs `(a_z, b_z)` drawn uniformly. A sample of
//! size `n` is represented by its multinomial counts over the population, so
//! the empirical objective is an exactly weighted sum.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::composite::huber;
use crate::engine::{prox_boost, Schedule, StageOutput};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, spd_solve};
use crate::oracles::deterministic_solve;
use crate::problem::{CompositeProblem, CompositeTruth, GradientModel, GroundTruth, ProblemInstance};
use crate::regularizer::{BallIndicator, Regularizer, Zero};
use crate::rng::{derive_rng, RngStream};
use crate::robust::{robust_select, Pseudometric};
use crate::trace::StageTrace;

/// Scalar loss applied to the residual `⟨a_z, x⟩ - b_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Loss {
    /// `r²/2`.
    Squared,
    /// Moreau envelope of `|r|` with parameter `nu`.
    Huber { nu: f64 },
}

impl Loss {
    fn eval(self, r: f64) -> (f64, f64) {
        match self {
            Loss::Squared => (0.5 * r * r, r),
            Loss::Huber { nu } => huber(nu, r),
        }
    }

    /// Upper bound on the second derivative.
    fn curvature(self) -> f64 {
        match self {
            Loss::Squared => 1.0,
            Loss::Huber { nu } => 1.0 / nu,
        }
    }
}

/// Population data shared by an [`ErmProblem`] and its gradient model.
#[derive(Debug)]
struct Population {
    dim: usize,
    /// Row-major `n_pop × dim`.
    rows: Vec<f64>,
    targets: Vec<f64>,
    loss: Loss,
    ridge: f64,
}

impl Population {
    fn len(&self) -> usize {
        self.targets.len()
    }

    fn row(&self, z: usize) -> &[f64] {
        &self.rows[z * self.dim..(z + 1) * self.dim]
    }

    /// `Σ w_z ℓ(⟨a_z,x⟩ - b_z) + ridge/2 |x|²`, gradient into `out`.
    fn weighted(&self, weights: &[(usize, f64)], x: &[f64], out: &mut [f64]) -> f64 {
        let mut v = 0.5 * self.ridge * dot(x, x);
        out.iter_mut().zip(x).for_each(|(o, xi)| *o = self.ridge * xi);
        for &(z, w) in weights {
            let a = self.row(z);
            let (l, d) = self.loss.eval(dot(a, x) - self.targets[z]);
            v += w * l;
            out.iter_mut().zip(a).for_each(|(o, ai)| *o += w * d * ai);
        }
        v
    }

    fn uniform_weights(&self) -> Vec<(usize, f64)> {
        let w = 1.0 / self.len() as f64;
        (0..self.len()).map(|z| (z, w)).collect()
    }
}

/// Smooth part of the population objective with single-sample stochastic gradients.
#[derive(Debug, Clone)]
pub struct PopulationModel(Arc<Population>);

impl GradientModel for PopulationModel {
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.0.dim];
        self.0.weighted(&self.0.uniform_weights(), x, &mut g)
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        self.0.weighted(&self.0.uniform_weights(), x, out);
    }

    fn stoch_grad(&self, x: &[f64], rng: &mut RngStream, out: &mut [f64]) {
        let z = ((rng.uniform() * self.0.len() as f64) as usize).min(self.0.len() - 1);
        self.0.weighted(&[(z, 1.0)], x, out);
    }

    fn hessian(&self) -> Option<DMatrix<f64>> {
        if self.0.loss != Loss::Squared {
            return None;
        }
        let (d, k) = (self.0.dim, self.0.len() as f64);
        let mut h = DMatrix::from_diagonal_element(d, d, self.0.ridge);
        for z in 0..self.0.len() {
            let a = self.0.row(z);
            for i in 0..d {
                for j in 0..d {
                    h[(i, j)] += a[i] * a[j] / k;
                }
            }
        }
        Some(h)
    }
}

/// Problem constants the algorithms are allowed to know.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErmConstants {
    pub mu: f64,
    /// Population smoothness `L`.
    pub lip_grad: f64,
    /// Per-sample smoothness `L̂`.
    pub lip_grad_hat: f64,
    /// Sample size `N` above which empirical risks are `μ`-strongly convex.
    pub n_min: u64,
    /// `ℓ̄`, root second moment of per-sample Lipschitz constants on `dom h`.
    pub lip_moment: Option<f64>,
}

/// A nonnegative loss over a finite population with known minimizer.
#[derive(Debug, Clone)]
pub struct ErmProblem {
    pop: Arc<Population>,
    regularizer: Arc<dyn Regularizer>,
    constants: ErmConstants,
    minimizer: Vec<f64>,
    min_value: f64,
}

impl ErmProblem {
    /// `rows` is row-major `targets.len() × dim`. The population minimizer is
    /// computed here; `f* <= 1e-12` is rejected.
    pub fn new(
        dim: usize,
        rows: Vec<f64>,
        targets: Vec<f64>,
        loss: Loss,
        ridge: f64,
        regularizer: Arc<dyn Regularizer>,
        constants: ErmConstants,
    ) -> Result<Self> {
        if dim == 0 || targets.is_empty() || rows.len() != dim * targets.len() {
            return Err(Error::invalid("population rows do not match targets and dimension"));
        }
        if let Loss::Huber { nu } = loss {
            if !(nu > 0.0) {
                return Err(Error::invalid("smoothing parameter must be positive"));
            }
        }
        let c = constants;
        crate::problem::condition_number(c.mu, c.lip_grad)?;
        if !(c.lip_grad_hat >= c.lip_grad) {
            return Err(Error::invalid(
                "per-sample smoothness must be at least the population smoothness",
            ));
        }
        if !(ridge >= 0.0) || c.n_min == 0 {
            return Err(Error::invalid("ridge must be nonnegative and N positive"));
        }
        let pop = Arc::new(Population {
            dim,
            rows,
            targets,
            loss,
            ridge,
        });
        let worst = (0..pop.len()).map(|z| dot(pop.row(z), pop.row(z))).fold(0.0, f64::max);
        if worst * loss.curvature() + ridge > c.lip_grad_hat * (1.0 + 1e-9) {
            return Err(Error::invalid("per-sample smoothness bound is violated by the data"));
        }
        let mut problem = Self {
            pop,
            regularizer,
            constants,
            minimizer: Vec::new(),
            min_value: 0.0,
        };
        let weights = problem.pop.uniform_weights();
        problem.minimizer = problem.solve(&weights, 0.0, &vec![0.0; dim], false)?;
        problem.min_value = problem.value(&problem.minimizer);
        if !(problem.min_value > 1e-12) {
            return Err(Error::invalid(format!(
                "minimum value {:e} must be positive",
                problem.min_value
            )));
        }
        Ok(problem)
    }

    pub fn dim(&self) -> usize {
        self.pop.dim
    }

    pub fn population_size(&self) -> usize {
        self.pop.len()
    }

    pub fn loss(&self) -> Loss {
        self.pop.loss
    }

    pub fn constants(&self) -> &ErmConstants {
        &self.constants
    }

    pub fn mu(&self) -> f64 {
        self.constants.mu
    }

    pub fn lip_grad(&self) -> f64 {
        self.constants.lip_grad
    }

    pub fn lip_grad_hat(&self) -> f64 {
        self.constants.lip_grad_hat
    }

    pub fn n_min(&self) -> u64 {
        self.constants.n_min
    }

    pub fn with_n_min(mut self, n_min: u64) -> Result<Self> {
        if n_min == 0 {
            return Err(Error::invalid("N must be positive"));
        }
        self.constants.n_min = n_min;
        Ok(self)
    }

    pub fn lip_moment(&self) -> Option<f64> {
        self.constants.lip_moment
    }

    pub fn regularizer(&self) -> &Arc<dyn Regularizer> {
        &self.regularizer
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }

    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    /// Population objective including the regularizer.
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.pop.weighted(&self.pop.uniform_weights(), x, &mut g) + self.regularizer.value(x)
    }

    pub fn gap(&self, x: &[f64]) -> f64 {
        self.value(x) - self.min_value
    }

    /// `(f(x) - f*)/f*`.
    pub fn relative_error(&self, x: &[f64]) -> f64 {
        self.gap(x) / self.min_value
    }

    /// Loss of one population member at `x`, without the regularizer.
    pub fn sample_loss(&self, x: &[f64], z: usize) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.pop.weighted(&[(z, 1.0)], x, &mut g)
    }

    pub fn population_model(&self) -> PopulationModel {
        PopulationModel(self.pop.clone())
    }

    /// The smooth population objective as a streaming problem with noise
    /// variance bound `sigma2`; carries ground truth when there is no regularizer.
    pub fn smooth_instance(&self, sigma2: f64) -> Result<ProblemInstance> {
        let truth = if self.regularizer.name() == "zero" {
            Some(GroundTruth {
                minimizer: self.minimizer.clone(),
                min_value: self.min_value,
            })
        } else {
            None
        };
        ProblemInstance::new(
            Arc::new(self.population_model()),
            self.mu(),
            self.lip_grad(),
            sigma2,
            truth,
        )
    }

    /// `g + h` with ground truth; the gradient noise bound is `4ℓ̄²`.
    pub fn composite(&self) -> Result<CompositeProblem> {
        let lm = self
            .lip_moment()
            .ok_or_else(|| Error::invalid("composite form needs the Lipschitz moment"))?;
        let smooth = self.smooth_instance(4.0 * lm * lm)?;
        let grad_at_min = smooth.grad(&self.minimizer);
        CompositeProblem::new(
            smooth,
            self.regularizer.clone(),
            self.mu(),
            Some(CompositeTruth {
                minimizer: self.minimizer.clone(),
                min_value: self.min_value,
                grad_at_min,
            }),
        )
    }

    /// Multinomial counts of `n` uniform draws from the population, as
    /// `(member, count)` pairs with nonzero counts.
    pub fn draw_counts(&self, n: u64, rng: &mut RngStream) -> Vec<(usize, u64)> {
        let k = self.pop.len();
        if n < (k as u64) / 4 {
            let mut idx: Vec<usize> = (0..n)
                .map(|_| ((rng.uniform() * k as f64) as usize).min(k - 1))
                .collect();
            idx.sort_unstable();
            let mut out: Vec<(usize, u64)> = Vec::new();
            for z in idx {
                match out.last_mut() {
                    Some((last, c)) if *last == z => *c += 1,
                    _ => out.push((z, 1)),
                }
            }
            return out;
        }
        let mut remaining = n;
        let mut out = Vec::new();
        for z in 0..k {
            if remaining == 0 {
                break;
            }
            let c = if z == k - 1 {
                remaining
            } else {
                Binomial::new(remaining, 1.0 / (k - z) as f64)
                    .expect("valid binomial parameters")
                    .sample(rng)
            };
            if c > 0 {
                out.push((z, c));
                remaining -= c;
            }
        }
        out
    }

    /// Minimizer of `Σ w_z f(y,z) + h(y) + λ/2 |y - center|²`.
    fn solve(&self, weights: &[(usize, f64)], lambda: f64, center: &[f64], force_iterative: bool) -> Result<Vec<f64>> {
        let d = self.dim();
        if !force_iterative && self.pop.loss == Loss::Squared && self.regularizer.name() == "zero" {
            let mut m = DMatrix::from_diagonal_element(d, d, self.pop.ridge + lambda);
            let mut rhs: Vec<f64> = center.iter().map(|c| lambda * c).collect();
            for &(z, w) in weights {
                let a = self.pop.row(z);
                let wb = w * self.pop.targets[z];
                for i in 0..d {
                    rhs[i] += wb * a[i];
                    for j in 0..d {
                        m[(i, j)] += w * a[i] * a[j];
                    }
                }
            }
            if let Some(x) = spd_solve(&m, &rhs) {
                return Ok(x);
            }
        }
        let mu = self.mu() + lambda;
        let tol = 1e-10 * mu * (1.0 + norm(center));
        deterministic_solve(
            |x, g| {
                let mut v = self.pop.weighted(weights, x, g);
                for ((gi, xi), ci) in g.iter_mut().zip(x).zip(center) {
                    v += 0.5 * lambda * (xi - ci) * (xi - ci);
                    *gi += lambda * (xi - ci);
                }
                v
            },
            self.regularizer.as_ref(),
            center,
            mu,
            self.lip_grad_hat() + lambda,
            tol,
            100_000,
        )
    }
}

fn counts_to_weights(counts: &[(usize, u64)], n: u64) -> Vec<(usize, f64)> {
    counts.iter().map(|&(z, c)| (z, c as f64 / n as f64)).collect()
}

/// Minimizer of the empirical risk on `n` fresh samples plus `λ/2 |y - center|²`.
pub fn erm(problem: &ErmProblem, n: u64, lambda: f64, center: &[f64], mut rng: RngStream) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("amplitude must be nonnegative"));
    }
    let counts = problem.draw_counts(n, &mut rng);
    problem.solve(&counts_to_weights(&counts, n), lambda, center, false)
}

/// `m` independent [`erm`] calls on `rng.child(i)`, then robust selection.
pub fn erm_r(problem: &ErmProblem, n: u64, m: usize, lambda: f64, center: &[f64], rng: &RngStream) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::invalid("trial count must be positive"));
    }
    let points = (0..m)
        .map(|i| erm(problem, n, lambda, center, rng.child(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(robust_select(&points, &Pseudometric::Euclidean)?.1)
}

/// Stage sample size `n_j`; `j = -1` gives `⌈432 L̂/(γμ)⌉`, otherwise
/// `432 ⌈(L̂+λ_j)/(μ+λ_j) (1/γ + Σ_{i≤j} λ_i/(μ+λ_{i-1}))⌉ ∨ N`.
pub fn sample_count(gamma: f64, j: i64, mu: f64, lip_hat: f64, lambdas: &[f64], n_min: u64) -> u64 {
    if j < 0 {
        return (432.0 * lip_hat / (gamma * mu)).ceil() as u64;
    }
    let j = j as usize;
    let sum: f64 = (0..=j)
        .map(|i| lambdas[i] / (mu + if i == 0 { 0.0 } else { lambdas[i - 1] }))
        .sum();
    let lam = lambdas[j];
    let n = 432 * ((lip_hat + lam) / (mu + lam) * (1.0 / gamma + sum)).ceil() as u64;
    n.max(n_min)
}

/// Confidence level implied by `m` trials over `stages` robust stages.
pub(crate) fn implied_failure(stages: usize, m: usize) -> f64 {
    (stages as f64 * (-(m as f64) / 18.0).exp()).clamp(1e-300, 1.0 - 1e-12)
}

/// Relative-accuracy continuation for nonnegative losses. Returns `x_{T+1}` and
/// the stage trace; trace radii use `δ = γ f*`.
pub fn boost_erm(
    problem: &ErmProblem,
    gamma: f64,
    lambdas: &[f64],
    m: usize,
    rng: &RngStream,
) -> Result<(Vec<f64>, StageTrace)> {
    if !(gamma > 0.0) {
        return Err(Error::invalid("relative accuracy must be positive"));
    }
    let (mu, lip, lip_hat, n_min) = (
        problem.mu(),
        problem.lip_grad(),
        problem.lip_grad_hat(),
        problem.n_min(),
    );
    let t = lambdas.len().saturating_sub(1);
    let schedule = Schedule::new(
        lambdas.to_vec(),
        m,
        gamma * problem.min_value(),
        implied_failure(t + 2, m),
        mu,
    )?;
    let start = vec![0.0; problem.dim()];
    prox_boost(
        &schedule,
        &start,
        |req, stage_rng| {
            let j = req.stage as i64 - 1;
            let n = if req.cleanup {
                let lam = lambdas[t];
                ((lip + lam) / (mu + lam) * sample_count(gamma, t as i64, mu, lip_hat, lambdas, n_min) as f64).ceil()
                    as u64
            } else {
                sample_count(gamma, j, mu, lip_hat, lambdas, n_min)
            };
            let point = erm_r(problem, n, m, req.lambda, req.center, &stage_rng)?;
            Ok(StageOutput {
                point,
                samples: n * m as u64,
                accuracy: schedule.delta,
                init_bound: None,
            })
        },
        rng,
    )
}

/// Shape of a synthetic population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErmSpec {
    pub dim: usize,
    /// Population size; a power of two at least `dim`.
    pub n_pop: usize,
    pub mu: f64,
    pub lip_grad: f64,
    pub lip_grad_hat: f64,
    /// Standard deviation of the residual noise in the targets.
    pub residual: f64,
    /// Defaults to `4 d κ̂`.
    pub n_min: Option<u64>,
}

/// Rows `a_z = s Q (√e ⊙ h_z)` where `h_z` is row `z` of a Sylvester Hadamard
/// matrix (first `dim` columns), so every `|a_z|² = s²` and the population
/// second moment is `s² Q diag(e) Qᵀ`.
fn hadamard_rows(spec: &ErmSpec, scale2: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    let (d, k) = (spec.dim, spec.n_pop);
    if !k.is_power_of_two() || k < d {
        return Err(Error::invalid(
            "population size must be a power of two at least the dimension",
        ));
    }
    let e_max = (spec.lip_grad - spec.mu) / (spec.lip_grad_hat - spec.mu);
    if !(e_max * d as f64 >= 1.0 - 1e-12) || !(e_max <= 1.0) {
        return Err(Error::invalid("cannot realize L and L̂ in this dimension"));
    }
    let mut e = vec![(1.0 - e_max) / (d as f64 - 1.0).max(1.0); d];
    e[0] = e_max;
    if d == 1 {
        e[0] = 1.0;
    }
    let q = {
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        g.qr().q()
    };
    let s = scale2.sqrt();
    let mut rows = vec![0.0; k * d];
    for z in 0..k {
        let v: Vec<f64> = (0..d)
            .map(|i| {
                let sign = if (z & i).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                s * e[i].sqrt() * sign
            })
            .collect();
        let a = &q * nalgebra::DVector::from_vec(v);
        rows[z * d..(z + 1) * d].copy_from_slice(a.as_slice());
    }
    Ok(rows)
}

fn check_spec(spec: &ErmSpec) -> Result<()> {
    if spec.dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    crate::problem::condition_number(spec.mu, spec.lip_grad)?;
    if !(spec.lip_grad_hat > spec.lip_grad) && !(spec.lip_grad_hat == spec.lip_grad && spec.lip_grad > spec.mu) {
        return Err(Error::invalid("need L̂ ≥ L > μ"));
    }
    Ok(())
}

fn n_min_default(spec: &ErmSpec) -> u64 {
    spec.n_min
        .unwrap_or_else(|| (4.0 * spec.dim as f64 * spec.lip_grad_hat / spec.mu).ceil() as u64)
}

/// Ridge least squares `½(⟨a,x⟩ - b)² + μ/2 |x|²` on an inconsistent
/// synthetic population, so `f* > 0`. The planted parameter has unit
/// expected norm, so `f* ≈ residual²/2` for small ridge. Every per-sample loss is exactly
/// `L̂`-smooth and the population is exactly `L`-smooth.
pub fn make_nonneg_erm(spec: &ErmSpec, seed: u64) -> Result<ErmProblem> {
    check_spec(spec)?;
    let mut rng = derive_rng(seed, &[3]);
    let rows = hadamard_rows(spec, spec.lip_grad_hat - spec.mu, &mut rng)?;
    let scale = 1.0 / (spec.dim as f64).sqrt();
    let x0: Vec<f64> = (0..spec.dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let targets: Vec<f64> = (0..spec.n_pop)
        .map(|z| {
            let noise: f64 = rng.sample(StandardNormal);
            dot(&rows[z * spec.dim..(z + 1) * spec.dim], &x0) + spec.residual * noise
        })
        .collect();
    ErmProblem::new(
        spec.dim,
        rows,
        targets,
        Loss::Squared,
        spec.mu,
        Arc::new(Zero),
        ErmConstants {
            mu: spec.mu,
            lip_grad: spec.lip_grad,
            lip_grad_hat: spec.lip_grad_hat,
            n_min: n_min_default(spec),
            lip_moment: None,
        },
    )
}

/// Huber regression `M_ν(⟨a,x⟩ - b) + μ/2 |x|²` constrained to a ball of the
/// given radius. `L̂` and `L` bound the smoothness of the smoothed loss, and
/// `ℓ̄ = √((L̂-μ)ν) + μ·radius`.
pub fn make_composite_erm(spec: &ErmSpec, nu: f64, radius: f64, seed: u64) -> Result<ErmProblem> {
    check_spec(spec)?;
    if !(nu > 0.0) || !(radius > 0.0) {
        return Err(Error::invalid("smoothing parameter and radius must be positive"));
    }
    let mut rng = derive_rng(seed, &[4]);
    let scale2 = (spec.lip_grad_hat - spec.mu) * nu;
    let rows = hadamard_rows(spec, scale2, &mut rng)?;
    let dir: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
    let x0: Vec<f64> = dir.iter().map(|v| 3.0 * radius * v / norm(&dir)).collect();
    let targets: Vec<f64> = (0..spec.n_pop)
        .map(|z| {
            let noise: f64 = rng.sample(StandardNormal);
            dot(&rows[z * spec.dim..(z + 1) * spec.dim], &x0) + spec.residual * noise
        })
        .collect();
    ErmProblem::new(
        spec.dim,
        rows,
        targets,
        Loss::Huber { nu },
        spec.mu,
        Arc::new(BallIndicator { radius }),
        ErmConstants {
            mu: spec.mu,
            lip_grad: spec.lip_grad,
            lip_grad_hat: spec.lip_grad_hat,
            n_min: n_min_default(spec),
            lip_moment: Some(scale2.sqrt() + spec.mu * radius),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{geometric_schedule, Variant};
    use crate::linalg::dist;
    use approx::assert_relative_eq;

    fn spec(dim: usize, n_pop: usize, mu: f64, lip: f64, lip_hat: f64) -> ErmSpec {
        ErmSpec {
            dim,
            n_pop,
            mu,
            lip_grad: lip,
            lip_grad_hat: lip_hat,
            residual: 2f64.sqrt(),
            n_min: None,
        }
    }

    #[test]
    fn sample_count_fixtures() {
        assert_eq!(sample_count(0.1, 0, 1.0, 10.0, &[1.0], 1), 26352);
        assert_eq!(sample_count(0.1, 0, 1.0, 10.0, &[1.0], 1_000_000), 1_000_000);
        assert_eq!(sample_count(1.0, -1, 1.0, 1.0, &[1.0], 1), 432);
    }

    #[test]
    fn sample_counts_shrink_with_conditioning() {
        for kappa_hat in [4.0, 100.0, 1e4] {
            let lambdas: Vec<f64> = (0..=14).map(|i| 2f64.powi(i)).collect();
            let ratios: Vec<f64> = lambdas.iter().map(|l| (kappa_hat + l) / (1.0 + l)).collect();
            assert!(ratios.windows(2).all(|w| w[1] <= w[0]));
            let gamma_term: Vec<f64> = ratios.iter().map(|r| r / 0.1).collect();
            assert!(gamma_term.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn generator_realizes_constants() {
        let p = make_nonneg_erm(&spec(10, 1024, 1.0, 50.0, 200.0), 1).unwrap();
        for z in 0..p.population_size() {
            let a = p.pop.row(z);
            assert_relative_eq!(dot(a, a) + 1.0, 200.0, max_relative = 1e-10);
        }
        let h = p.population_model().hessian().unwrap();
        let eig = h.symmetric_eigen().eigenvalues;
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert_relative_eq!(hi, 50.0, max_relative = 1e-9);
        assert!(lo >= 1.0 - 1e-9);
        assert!(p.lip_grad_hat() / p.mu() >= p.lip_grad() / p.mu());
        assert!(p.min_value() > 0.1);
        assert_eq!(p.n_min(), 4 * 10 * 200);
    }

    #[test]
    fn minimum_matches_normal_equations() {
        let p = make_nonneg_erm(&spec(5, 64, 0.5, 5.0, 10.0), 2).unwrap();
        let h = p.population_model().hessian().unwrap();
        let k = p.population_size() as f64;
        let mut rhs = vec![0.0; 5];
        for z in 0..p.population_size() {
            crate::linalg::axpy(p.pop.targets[z] / k, p.pop.row(z), &mut rhs);
        }
        let x = spd_solve(&h, &rhs).unwrap();
        let f_star = (0..p.population_size()).map(|z| p.sample_loss(&x, z)).sum::<f64>() / k;
        assert_relative_eq!(p.min_value(), f_star, max_relative = 1e-10);
        assert!(dist(p.minimizer(), &x) < 1e-10);
    }

    #[test]
    fn consistent_population_is_rejected() {
        let rows = vec![1.0, 0.0, 0.0, 1.0];
        let c = ErmConstants {
            mu: 1e-3,
            lip_grad: 1.0,
            lip_grad_hat: 2.0,
            n_min: 1,
            lip_moment: None,
        };
        let err = ErmProblem::new(2, rows, vec![0.0, 0.0], Loss::Squared, 0.0, Arc::new(Zero), c);
        assert!(err.is_err());
    }

    #[test]
    fn closed_form_matches_iterative() {
        let p = make_nonneg_erm(&spec(6, 256, 1.0, 20.0, 40.0), 3).unwrap();
        let mut rng = derive_rng(5, &[]);
        let counts = p.draw_counts(500, &mut rng);
        let w = counts_to_weights(&counts, 500);
        let center = vec![0.5; 6];
        let a = p.solve(&w, 3.0, &center, false).unwrap();
        let b = p.solve(&w, 3.0, &center, true).unwrap();
        assert!(dist(&a, &b) <= 1e-8);
    }

    #[test]
    fn counts_sum_to_n() {
        let p = make_nonneg_erm(&spec(4, 128, 1.0, 10.0, 20.0), 4).unwrap();
        let mut rng = derive_rng(6, &[]);
        for n in [1, 7, 31, 32, 500, 100_000] {
            let c = p.draw_counts(n, &mut rng);
            assert_eq!(c.iter().map(|x| x.1).sum::<u64>(), n);
            assert!(c.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }

    #[test]
    fn whole_population_recovers_minimizer() {
        let p = make_nonneg_erm(&spec(4, 64, 1.0, 10.0, 20.0), 5).unwrap();
        let y = p.solve(&p.pop.uniform_weights(), 0.0, &[0.0; 4], false).unwrap();
        assert!(dist(&y, p.minimizer()) < 1e-12);
    }

    #[test]
    fn single_trial_robust_erm_is_plain_erm() {
        let p = make_nonneg_erm(&spec(4, 64, 1.0, 10.0, 20.0), 6).unwrap();
        let rng = derive_rng(7, &[]);
        let a = erm_r(&p, 50, 1, 0.5, &[0.0; 4], &rng).unwrap();
        let b = erm(&p, 50, 0.5, &[0.0; 4], rng.child(0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn robust_erm_resists_outliers() {
        let points = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![50.0, 50.0],
            vec![0.0, -0.1],
            vec![-40.0, 9.0],
        ];
        let (_, y) = robust_select(&points, &Pseudometric::Euclidean).unwrap();
        assert!(norm(&y) <= 3.0 * 0.1 + 1e-12);
    }

    #[test]
    fn erm_radius_holds_two_thirds_of_the_time() {
        let p = make_nonneg_erm(&spec(5, 1024, 1.0, 10.0, 40.0), 8).unwrap();
        let (mu, lip_hat, f_star) = (p.mu(), p.lip_grad_hat(), p.min_value());
        let eps = 0.3;
        let n = (96.0 * lip_hat * f_star / (mu * mu * eps * eps)).ceil() as u64;
        let reps = 300;
        let misses = (0..reps)
            .filter(|&r| {
                let y = erm(&p, n, 0.0, &[0.0; 5], derive_rng(9, &[r])).unwrap();
                dist(&y, p.minimizer()) > eps
            })
            .count();
        assert!((misses as f64) < reps as f64 / 3.0, "{misses} misses");
    }

    #[test]
    fn boost_erm_accounting_reconciles() {
        let p = make_nonneg_erm(&spec(4, 256, 1.0, 8.0, 16.0), 9)
            .unwrap()
            .with_n_min(10)
            .unwrap();
        let s = geometric_schedule(1.0, 8.0, 0.5, 0.2, Variant::BoostErm).unwrap();
        let gamma = s.delta;
        let (x, trace) = boost_erm(&p, gamma, &s.lambdas, 3, &derive_rng(1, &[])).unwrap();
        assert_eq!(trace.len(), s.t() + 2);
        let t = s.t();
        let mut expected: u64 = (0..=t as i64)
            .map(|j| 3 * sample_count(gamma, j - 1, 1.0, 16.0, &s.lambdas, 10))
            .sum();
        let n_t = sample_count(gamma, t as i64, 1.0, 16.0, &s.lambdas, 10);
        expected += 3 * ((8.0 + s.lambdas[t]) / (1.0 + s.lambdas[t]) * n_t as f64).ceil() as u64;
        assert_eq!(trace.total_samples(), expected);
        assert_eq!(trace.last_point().unwrap(), x.as_slice());
        assert!(p.relative_error(&x) <= 0.5);
    }

    #[test]
    fn composite_erm_is_constrained_and_consistent() {
        let p = make_composite_erm(&spec(4, 256, 1.0, 8.0, 16.0), 1.0, 1.0, 2).unwrap();
        assert_relative_eq!(norm(p.minimizer()), 1.0, max_relative = 1e-8);
        let c = p.composite().unwrap();
        assert_relative_eq!(c.smooth().sigma2(), 4.0 * p.lip_moment().unwrap().powi(2));
        assert!(crate::problems::kkt_residual(&c, p.minimizer()) < 1e-8);
        let y = erm(&p, 20_000, 0.0, &[0.0; 4], derive_rng(3, &[])).unwrap();
        assert!(norm(&y) <= 1.0 + 1e-12);
        assert!(p.gap(&y) >= -1e-12);
    }
}
