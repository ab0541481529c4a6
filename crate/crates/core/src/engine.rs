//! The proximal continuation driver and its streaming instantiation.
//!
//! Stages are numbered `0..=T+1`. Stage `j` works on the subproblem
//! `f^{j-1}(y) = f(y) + λ_{j-1}/2 |y - x_{j-1}|^2` with `λ_{-1} = 0`, so stage 0
//! is the initialization on `f` itself and stage `T+1` is the cleanup.

use crate::error::{Error, Result};
use crate::linalg::dist_sq;
use crate::problem::ProblemInstance;
use crate::rng::RngStream;
use crate::robust::{robust_select, Pseudometric};
use crate::trace::{StageRecord, StageTrace};

/// One request to a minimization oracle for `φ(y) = f(y) + λ/2 |y - center|^2`.
#[derive(Debug, Clone, Copy)]
pub struct OracleQuery<'a> {
    pub delta: f64,
    pub lambda: f64,
    /// Upper bound on `φ(center) - min φ`.
    pub delta_init: f64,
    pub center: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutput {
    pub point: Vec<f64>,
    pub samples: u64,
}

/// Returns a point with `φ(y) - min φ <= delta` with probability at least 2/3
/// whenever `delta_init` bounds the initial gap.
pub trait MinimizationOracle: Send + Sync {
    fn query(&self, query: &OracleQuery<'_>, rng: RngStream) -> Result<OracleOutput>;

    fn name(&self) -> &str;
}

/// `√(2δ/(μ+λ))`.
pub fn epsilon_schedule(delta: f64, mu: f64, lambda: f64) -> f64 {
    (2.0 * delta / (mu + lambda)).sqrt()
}

/// Amplitudes and confidence parameters of one continuation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// `λ_0..λ_T`.
    pub lambdas: Vec<f64>,
    pub m: usize,
    pub delta: f64,
    pub p: f64,
    pub mu: f64,
}

impl Schedule {
    pub fn new(lambdas: Vec<f64>, m: usize, delta: f64, p: f64, mu: f64) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::invalid("schedule needs at least one amplitude"));
        }
        if !(mu > 0.0) || !(delta > 0.0) {
            return Err(Error::invalid("schedule needs positive mu and delta"));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!(
                "failure probability must lie in (0,1), got {p}"
            )));
        }
        if m == 0 {
            return Err(Error::invalid("trial count must be positive"));
        }
        if lambdas[0] < 0.0 || lambdas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("amplitudes must be nonnegative and strictly increasing"));
        }
        Ok(Self {
            lambdas,
            m,
            delta,
            p,
            mu,
        })
    }

    /// `T`, the index of the last amplitude.
    pub fn t(&self) -> usize {
        self.lambdas.len() - 1
    }

    /// Number of stages including initialization and cleanup, `T + 2`.
    pub fn stage_count(&self) -> usize {
        self.lambdas.len() + 1
    }

    /// `λ_{stage-1}`, zero for the initialization stage.
    pub fn lambda_before(&self, stage: usize) -> f64 {
        if stage == 0 {
            0.0
        } else {
            self.lambdas[stage - 1]
        }
    }

    /// `ε_{stage-1}`.
    pub fn radius_before(&self, stage: usize) -> f64 {
        epsilon_schedule(self.delta, self.mu, self.lambda_before(stage))
    }

    /// `λ_i / (μ + λ_{i-1})`.
    pub fn ratio(&self, i: usize) -> f64 {
        self.lambdas[i] / (self.mu + self.lambda_before(i))
    }

    /// `Σ_{i<count} λ_i / (μ + λ_{i-1})`.
    pub fn partial_sum(&self, count: usize) -> f64 {
        (0..count).map(|i| self.ratio(i)).sum()
    }

    /// `1 + Σ_{i=0}^{T} λ_i / (μ + λ_{i-1})`; the final gap is at most `delta` times this.
    pub fn bound_factor(&self) -> f64 {
        1.0 + self.partial_sum(self.lambdas.len())
    }
}

/// Which corollary fixes `m` and `δ` for the geometric schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// `m = ⌈18 ln((T+2)/p)⌉`, `δ = ε/(2+2T)`.
    BoostAlg,
    /// Same constants as `BoostAlg`; `ε` is the relative accuracy `γ'`.
    BoostErm,
    /// `m = ⌈18 ln((T+3)/p)⌉`, `δ = ε/(4+2T)`.
    BoostErmc,
    /// `m = ⌈18 ln((4+2T)/p)⌉`, `δ = ε/(2+2T)`.
    BoostAlgc,
}

impl Variant {
    pub fn trial_count(self, t: usize, p: f64) -> usize {
        let t = t as f64;
        let numerator = match self {
            Variant::BoostAlg | Variant::BoostErm => t + 2.0,
            Variant::BoostErmc => t + 3.0,
            Variant::BoostAlgc => 4.0 + 2.0 * t,
        };
        (18.0 * (numerator / p).ln()).ceil() as usize
    }

    pub fn delta(self, t: usize, eps: f64) -> f64 {
        let t = t as f64;
        match self {
            Variant::BoostErmc => eps / (4.0 + 2.0 * t),
            _ => eps / (2.0 + 2.0 * t),
        }
    }
}

/// `⌈log₂ κ⌉`, with a small guard so exact powers of two are not rounded up.
pub fn geometric_stage_count(kappa: f64) -> usize {
    (kappa.log2() - 1e-12).ceil().max(0.0) as usize
}

/// `λ_i = μ 2^i` for `i = 0..=⌈log₂ κ⌉`, with `m` and `δ` from `variant`.
pub fn geometric_schedule(mu: f64, lip_grad: f64, eps_target: f64, p: f64, variant: Variant) -> Result<Schedule> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "failure probability must lie in (0,1), got {p}"
        )));
    }
    if !(eps_target > 0.0) {
        return Err(Error::invalid("target accuracy must be positive"));
    }
    let kappa = crate::problem::condition_number(mu, lip_grad)?;
    let t = geometric_stage_count(kappa);
    let lambdas = (0..=t).map(|i| mu * 2f64.powi(i as i32)).collect();
    Schedule::new(lambdas, variant.trial_count(t, p), variant.delta(t, eps_target), p, mu)
}

/// Total oracle calls of the geometric `BoostAlg`:
/// `⌈18 ln(⌈2+log₂κ⌉/p)⌉ · ⌈2+log₂κ⌉`.
pub fn boost_alg_call_count(kappa: f64, p: f64) -> usize {
    let stages = (2 + geometric_stage_count(kappa)) as f64;
    (18.0 * (stages / p).ln()).ceil() as usize * stages as usize
}

/// Cap on every initialization bound of the geometric `BoostAlg`:
/// `(κ + 1 + 2⌈log₂κ⌉)/(2 + 2⌈log₂κ⌉) · ε`.
pub fn boost_alg_delta_cap(kappa: f64, eps: f64) -> f64 {
    let t = geometric_stage_count(kappa) as f64;
    (kappa + 1.0 + 2.0 * t) / (2.0 + 2.0 * t) * eps
}

/// `Δ_j = δ(scale · (L+λ_{j-1})/(μ+λ_{j-1}) + Σ_{i<j} λ_i/(μ+λ_{i-1}))` for
/// `j = 0..=T+1`. `scale` is 1 for `BoostAlg` and 9 for its composite form.
pub fn init_bound(schedule: &Schedule, lip_grad: f64, j: usize, scale: f64) -> f64 {
    let lam = schedule.lambda_before(j);
    schedule.delta * (scale * (lip_grad + lam) / (schedule.mu + lam) + schedule.partial_sum(j))
}

/// What the driver asks of stage `stage`.
#[derive(Debug, Clone, Copy)]
pub struct StageRequest<'a> {
    pub stage: usize,
    /// `λ_{stage-1}`.
    pub lambda: f64,
    /// `x_{stage-1}`, the previous output (or the start point).
    pub center: &'a [f64],
    /// `ε_{stage-1}`, the distance the stage must reach.
    pub radius: f64,
    pub cleanup: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub point: Vec<f64>,
    pub samples: u64,
    /// Accuracy requested from the underlying oracle.
    pub accuracy: f64,
    pub init_bound: Option<f64>,
}

/// Runs stages `0..=T+1`, each on the child stream `rng.child(stage)`.
///
/// The driver only sequences the stages and records the trace; whether each
/// stage met its radius is judged afterwards against ground truth.
pub fn prox_boost<F>(
    schedule: &Schedule,
    start: &[f64],
    mut estimator: F,
    rng: &RngStream,
) -> Result<(Vec<f64>, StageTrace)>
where
    F: FnMut(&StageRequest<'_>, RngStream) -> Result<StageOutput>,
{
    let mut trace = StageTrace {
        start: Some(start.to_vec()),
        stages: Vec::with_capacity(schedule.stage_count()),
    };
    let mut center = start.to_vec();
    for stage in 0..schedule.stage_count() {
        let req = StageRequest {
            stage,
            lambda: schedule.lambda_before(stage),
            center: &center,
            radius: schedule.radius_before(stage),
            cleanup: stage == schedule.stage_count() - 1,
        };
        let out = estimator(&req, rng.child(stage as u64)).map_err(|e| e.at_stage(stage))?;
        if out.point.len() != start.len() {
            return Err(
                Error::Invariant(format!("stage {stage} returned a point of the wrong dimension")).at_stage(stage),
            );
        }
        trace.stages.push(StageRecord {
            center: out.point.clone(),
            radius: req.radius,
            lambda: req.lambda,
            accuracy: out.accuracy,
            init_bound: out.init_bound,
            samples_used: out.samples,
            exact_prox_minimizer: None,
        });
        center = out.point;
    }
    Ok((center, trace))
}

/// Queries `alg` `m` times on independent children of `rng` and keeps the
/// response with the smallest majority radius.
pub fn alg_r(alg: &dyn MinimizationOracle, query: &OracleQuery<'_>, m: usize, rng: &RngStream) -> Result<OracleOutput> {
    if m == 0 {
        return Err(Error::invalid("trial count must be positive"));
    }
    let mut points = Vec::with_capacity(m);
    let mut samples = 0;
    for i in 0..m {
        let out = alg.query(query, rng.child(i as u64))?;
        samples += out.samples;
        points.push(out.point);
    }
    let (_, point) = robust_select(&points, &Pseudometric::Euclidean)?;
    Ok(OracleOutput { point, samples })
}

/// Continuation with a streaming oracle: each stage is an `alg_r` call at
/// accuracy `δ/9`, the cleanup at `(μ+λ_T)/(L+λ_T)·δ/9`.
pub fn boost_alg(
    alg: &dyn MinimizationOracle,
    lip_grad: f64,
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
    prox_boost(
        schedule,
        x_in,
        |req, stage_rng| {
            let init = if req.stage == 0 {
                delta_in
            } else {
                init_bound(schedule, lip_grad, req.stage - 1, 1.0)
            };
            let accuracy = if req.cleanup {
                let lam = req.lambda;
                (schedule.mu + lam) / (lip_grad + lam) * delta / 9.0
            } else {
                delta / 9.0
            };
            let q = OracleQuery {
                delta: accuracy,
                lambda: req.lambda,
                delta_init: init,
                center: req.center,
            };
            let out = alg_r(alg, &q, schedule.m, &stage_rng)?;
            Ok(StageOutput {
                point: out.point,
                samples: out.samples,
                accuracy,
                init_bound: Some(init),
            })
        },
        rng,
    )
}

/// Fills `exact_prox_minimizer` for every stage of a trace on a quadratic problem.
pub fn annotate_exact_minimizers(trace: &mut StageTrace, problem: &ProblemInstance) -> Result<()> {
    let start = trace
        .start
        .clone()
        .ok_or_else(|| Error::invalid("trace has no start point"))?;
    let mut center = start;
    for stage in &mut trace.stages {
        let sub = problem.proximal(stage.lambda, &center)?;
        let gt = sub
            .ground_truth()
            .ok_or(Error::MissingGroundTruth("closed-form proximal minimizer"))?;
        stage.exact_prox_minimizer = Some(gt.minimizer.clone());
        center = stage.center.clone();
    }
    Ok(())
}

/// Slacks of the three inexact proximal point inequalities at one index `j`.
/// Each is `right side - left side` and should be nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionRow {
    pub j: usize,
    /// `Σ_{i≤j} λ_i/2 |x̄_i - x_i|^2 - (f^j(x̄_{j+1}) - f*)`.
    pub optimal_value: f64,
    /// `(f^j(x_{j+1}) - f^j(x̄_{j+1})) + Σ_{i≤j} ... - (f(x_{j+1}) - f*)`.
    pub progress: f64,
    /// `(L+λ_{j-1})/2 |x̄_j - x_j|^2 + Σ_{i<j} ... - (f(x_j) - f*)`.
    pub smooth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub rows: Vec<DecompositionRow>,
}

impl DecompositionReport {
    pub fn min_slack(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| [r.optimal_value, r.progress, r.smooth])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.min_slack() >= -tol
    }

    pub fn inequality_count(&self) -> usize {
        3 * self.rows.len()
    }
}

/// Evaluates the inexact proximal point inequalities for `λ_0..λ_T` and the
/// points `x_0..x_{T+1}` on a quadratic problem with closed-form minimizers.
pub fn error_decomposition(
    problem: &ProblemInstance,
    lambdas: &[f64],
    points: &[Vec<f64>],
) -> Result<DecompositionReport> {
    if points.len() != lambdas.len() + 1 {
        return Err(Error::invalid("need exactly one more point than amplitudes"));
    }
    let gt = problem
        .ground_truth()
        .ok_or(Error::MissingGroundTruth("error decomposition"))?;
    let f_star = gt.min_value;
    // x̄_0 = argmin f, x̄_{i+1} = argmin f^i.
    let mut bars = vec![gt.minimizer.clone()];
    for (lam, x) in lambdas.iter().zip(points) {
        let sub = problem.proximal(*lam, x)?;
        let m = sub
            .ground_truth()
            .ok_or(Error::MissingGroundTruth("closed-form proximal minimizer"))?;
        bars.push(m.minimizer.clone());
    }
    let f_j = |j: usize, y: &[f64]| problem.value(y) + 0.5 * lambdas[j] * dist_sq(y, &points[j]);
    let drift = |i: usize| 0.5 * lambdas[i] * dist_sq(&bars[i], &points[i]);
    let mut rows = Vec::with_capacity(lambdas.len());
    let mut sum_before = 0.0;
    for j in 0..lambdas.len() {
        let sum_through = sum_before + drift(j);
        let opt = f_j(j, &bars[j + 1]);
        let lam_prev = if j == 0 { 0.0 } else { lambdas[j - 1] };
        rows.push(DecompositionRow {
            j,
            optimal_value: sum_through - (opt - f_star),
            progress: (f_j(j, &points[j + 1]) - opt) + sum_through - (problem.value(&points[j + 1]) - f_star),
            smooth: 0.5 * (problem.lip_grad() + lam_prev) * dist_sq(&bars[j], &points[j]) + sum_before
                - (problem.value(&points[j]) - f_star),
        });
        sum_before = sum_through;
    }
    Ok(DecompositionReport { rows })
}

/// [`error_decomposition`] on the points and amplitudes recorded in a trace.
pub fn verify_error_decomposition(trace: &StageTrace, problem: &ProblemInstance) -> Result<DecompositionReport> {
    if trace.stages.len() < 2 {
        return Err(Error::invalid("trace needs an initialization and a cleanup stage"));
    }
    let lambdas: Vec<f64> = trace.stages[1..].iter().map(|s| s.lambda).collect();
    let points: Vec<Vec<f64>> = trace.stages.iter().map(|s| s.center.clone()).collect();
    error_decomposition(problem, &lambdas, &points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn epsilon_examples() {
        assert_relative_eq!(epsilon_schedule(0.5, 1.0, 3.0), 0.5);
        assert_relative_eq!(epsilon_schedule(0.5, 2.0, 0.0), (0.5f64).sqrt());
        assert_eq!(epsilon_schedule(0.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn geometric_schedule_examples() {
        let s = geometric_schedule(1.0, 16.0, 1.0, 0.01, Variant::BoostAlg).unwrap();
        assert_eq!(s.t(), 4);
        assert_eq!(s.m, 116);
        assert_relative_eq!(s.delta, 0.1);
        let lt = *s.lambdas.last().unwrap();
        assert_relative_eq!((16.0 + lt) / (1.0 + lt), 32.0 / 17.0);

        let s = geometric_schedule(3.0, 3.0, 1.0, 0.1, Variant::BoostAlg).unwrap();
        assert_eq!(s.t(), 0);
        assert_eq!(s.lambdas, vec![3.0]);
        assert_relative_eq!(s.delta, 0.5);

        assert!(geometric_schedule(1.0, 2.0, 1.0, 1.0, Variant::BoostAlg).is_err());
        assert!(geometric_schedule(1.0, 2.0, 1.0, 0.0, Variant::BoostAlg).is_err());
    }

    #[test]
    fn corollary_constants() {
        assert_eq!(boost_alg_call_count(16.0, 0.01), 696);
        assert_eq!(Variant::BoostErm.trial_count(3, 0.05), 83);
        assert_eq!(Variant::BoostErmc.trial_count(3, 0.05), 87);
        assert_eq!(Variant::BoostAlgc.trial_count(4, 0.01), 128);
        assert_relative_eq!(Variant::BoostErmc.delta(3, 1.0), 0.1);
    }

    #[test]
    fn bound_factor_for_three_stages() {
        let s = Schedule::new(vec![1.0, 2.0, 4.0, 8.0], 1, 1.0, 0.5, 1.0).unwrap();
        assert_relative_eq!(
            s.bound_factor(),
            1.0 + 1.0 + 1.0 + 4.0 / 3.0 + 8.0 / 5.0,
            epsilon = 1e-15
        );
        assert!(s.bound_factor() <= 8.0);
    }

    #[test]
    fn init_bound_examples() {
        let s = Schedule::new(vec![1.0, 2.0], 1, 1.0, 0.5, 1.0).unwrap();
        assert_relative_eq!(init_bound(&s, 4.0, 1, 1.0), 3.5);
        assert_relative_eq!(init_bound(&s, 4.0, 1, 9.0), 23.5);
        assert_relative_eq!(init_bound(&s, 4.0, 0, 1.0), 4.0);
    }

    #[test]
    fn schedule_rejects_non_increasing() {
        assert!(Schedule::new(vec![1.0, 1.0], 1, 1.0, 0.5, 1.0).is_err());
        assert!(Schedule::new(vec![], 1, 1.0, 0.5, 1.0).is_err());
    }
}
