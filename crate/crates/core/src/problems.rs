//! Synthetic problem families with exact ground truth.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot, matvec, norm, row_major};
use crate::oracles::deterministic_solve;
use crate::problem::{CompositeProblem, CompositeTruth, GradientModel, GroundTruth, ProblemInstance};
use crate::regularizer::{BallIndicator, BoxIndicator, Regularizer, L1};
use crate::rng::{derive_rng, RngStream};

/// Distribution of each noise coordinate before scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Tail {
    Gaussian,
    StudentT(f64),
}

impl Default for Tail {
    fn default() -> Self {
        Tail::StudentT(2.5)
    }
}

impl fmt::Display for Tail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tail::Gaussian => f.write_str("gaussian"),
            Tail::StudentT(dof) => write!(f, "student_t({dof})"),
        }
    }
}

impl FromStr for Tail {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "gaussian" {
            return Ok(Tail::Gaussian);
        }
        if s == "student_t" {
            return Ok(Tail::default());
        }
        let dof = s
            .strip_prefix("student_t(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::Config(format!("unknown tail `{s}`")))?;
        Ok(Tail::StudentT(dof))
    }
}

/// Additive i.i.d. per-coordinate noise with total variance `sigma2`.
#[derive(Debug, Clone)]
pub struct Noise {
    tail: Tail,
    scale: f64,
    student: Option<StudentT<f64>>,
}

impl Noise {
    pub fn new(tail: Tail, sigma2: f64, dim: usize) -> Result<Self> {
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid(format!(
                "noise variance must be finite and nonnegative, got {sigma2}"
            )));
        }
        let per_coord = sigma2 / dim as f64;
        let (scale, student) = match tail {
            Tail::Gaussian => (per_coord.sqrt(), None),
            Tail::StudentT(dof) => {
                if !(dof > 2.0) {
                    return Err(Error::invalid(format!(
                        "student-t needs more than 2 degrees of freedom, got {dof}"
                    )));
                }
                let dist = StudentT::new(dof).map_err(|e| Error::invalid(e.to_string()))?;
                ((per_coord * (dof - 2.0) / dof).sqrt(), Some(dist))
            }
        };
        Ok(Self { tail, scale, student })
    }

    pub fn none(dim: usize) -> Self {
        Self::new(Tail::Gaussian, 0.0, dim).expect("zero noise is valid")
    }

    pub fn tail(&self) -> Tail {
        self.tail
    }

    /// Adds one noise draw to `out`.
    pub fn add_to(&self, rng: &mut RngStream, out: &mut [f64]) {
        if self.scale == 0.0 {
            return;
        }
        match &self.student {
            Some(t) => out.iter_mut().for_each(|o| *o += self.scale * t.sample(rng)),
            None => out.iter_mut().for_each(|o| {
                let z: f64 = rng.sample(StandardNormal);
                *o += self.scale * z
            }),
        }
    }
}

/// `½ (x - c)ᵀ A (x - c) + offset` with noisy gradients `A(x - c) + ξ`.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    a: DMatrix<f64>,
    a_rows: Vec<f64>,
    center: Vec<f64>,
    offset: f64,
    noise: Noise,
}

impl QuadraticModel {
    pub fn new(a: DMatrix<f64>, center: Vec<f64>, offset: f64, noise: Noise) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() != center.len() {
            return Err(Error::invalid("quadratic needs a square matrix matching the center"));
        }
        Ok(Self {
            a_rows: row_major(&a),
            a,
            center,
            offset,
            noise,
        })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl GradientModel for QuadraticModel {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let mut ad = vec![0.0; diff.len()];
        matvec(&self.a_rows, &diff, &mut ad);
        0.5 * dot(&diff, &ad) + self.offset
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        let diff: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        matvec(&self.a_rows, &diff, out);
    }

    fn stoch_grad(&self, x: &[f64], rng: &mut RngStream, out: &mut [f64]) {
        self.grad(x, out);
        self.noise.add_to(rng, out);
    }

    fn hessian(&self) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub mu: f64,
    pub lip_grad: f64,
    /// Total gradient-noise variance `σ²`.
    pub sigma2: f64,
    pub tail: Tail,
}

fn gaussian_vec(rng: &mut RngStream, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Haar-distributed orthogonal matrix via QR with sign correction.
fn random_orthogonal(rng: &mut RngStream, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Eigenvalues log-spaced between `mu` and `lip`.
pub fn log_spectrum(d: usize, mu: f64, lip: f64) -> Vec<f64> {
    if d == 1 {
        return vec![mu];
    }
    let mut s: Vec<f64> = (0..d)
        .map(|i| mu * (lip / mu).powf(i as f64 / (d - 1) as f64))
        .collect();
    s[0] = mu;
    s[d - 1] = lip;
    s
}

struct Spectral {
    q: DMatrix<f64>,
    eig: Vec<f64>,
}

impl Spectral {
    fn matrix(&self) -> DMatrix<f64> {
        let d = self.eig.len();
        let a = &self.q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.eig.clone())) * self.q.transpose();
        // Symmetrize away rounding.
        DMatrix::from_fn(d, d, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
    }
}

fn check_constants(dim: usize, mu: f64, lip: f64) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    crate::problem::condition_number(mu, lip).map(|_| ())
}

fn spectral(spec: &QuadraticSpec, rng: &mut RngStream) -> Spectral {
    Spectral {
        q: random_orthogonal(rng, spec.dim),
        eig: log_spectrum(spec.dim, spec.mu, spec.lip_grad),
    }
}

/// Rotated quadratic with log-spaced spectrum in `[mu, lip_grad]` and a
/// standard-normal minimizer; `f* = 0`.
pub fn make_quadratic(spec: &QuadraticSpec, seed: u64) -> Result<ProblemInstance> {
    check_constants(spec.dim, spec.mu, spec.lip_grad)?;
    let mut rng = derive_rng(seed, &[0]);
    let sp = spectral(spec, &mut rng);
    let xbar = gaussian_vec(&mut rng, spec.dim);
    let noise = Noise::new(spec.tail, spec.sigma2, spec.dim)?;
    let model = QuadraticModel::new(sp.matrix(), xbar.clone(), 0.0, noise)?;
    ProblemInstance::new(
        Arc::new(model),
        spec.mu,
        spec.lip_grad,
        spec.sigma2,
        Some(GroundTruth {
            minimizer: xbar,
            min_value: 0.0,
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CompositeKind {
    Ball { radius: f64 },
    Box { lo: f64, hi: f64 },
    L1 { weight: f64 },
}

impl fmt::Display for CompositeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompositeKind::Ball { radius } => write!(f, "ball({radius})"),
            CompositeKind::Box { lo, hi } => write!(f, "box({lo},{hi})"),
            CompositeKind::L1 { weight } => write!(f, "l1({weight})"),
        }
    }
}

impl FromStr for CompositeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown composite kind `{s}`"));
        let (name, rest) = s.trim().split_once('(').ok_or_else(bad)?;
        let args: Vec<f64> = rest
            .strip_suffix(')')
            .ok_or_else(bad)?
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (name.trim(), args.as_slice()) {
            ("ball", [r]) => Ok(CompositeKind::Ball { radius: *r }),
            ("box", [lo, hi]) => Ok(CompositeKind::Box { lo: *lo, hi: *hi }),
            ("l1", [w]) => Ok(CompositeKind::L1 { weight: *w }),
            _ => Err(bad()),
        }
    }
}

/// Ball-constrained minimizer of `½(x-c)ᵀA(x-c)` with `A = Q diag(eig) Qᵀ`,
/// via bisection on the multiplier of the secular equation.
fn ball_minimizer(sp: &Spectral, c: &[f64], radius: f64) -> Vec<f64> {
    if norm(c) <= radius {
        return c.to_vec();
    }
    let w = sp.q.transpose() * nalgebra::DVector::from_column_slice(c);
    let norm_at = |nu: f64| {
        sp.eig
            .iter()
            .zip(w.iter())
            .map(|(l, wi)| (l * wi / (l + nu)).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let (mut lo, mut hi) = (0.0, sp.eig.iter().cloned().fold(0.0, f64::max) * norm(c) / radius);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_at(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    let y: Vec<f64> = sp.eig.iter().zip(w.iter()).map(|(l, wi)| l * wi / (l + nu)).collect();
    let x = (&sp.q * nalgebra::DVector::from_vec(y)).as_slice().to_vec();
    let s = radius / norm(&x);
    x.iter().map(|v| v * s).collect()
}

/// Attaches ground truth to `g + h` by solving it with the deterministic solver.
pub fn composite_with_truth(smooth: ProblemInstance, h: Arc<dyn Regularizer>) -> Result<CompositeProblem> {
    let start = vec![0.0; smooth.dim()];
    let model = smooth.model().clone();
    let x = deterministic_solve(
        |x, g| {
            model.grad(x, g);
            model.value(x)
        },
        h.as_ref(),
        &start,
        smooth.mu(),
        smooth.lip_grad(),
        1e-13 * smooth.lip_grad(),
        100_000,
    )?;
    truth_at(smooth, h, x)
}

fn truth_at(smooth: ProblemInstance, h: Arc<dyn Regularizer>, x: Vec<f64>) -> Result<CompositeProblem> {
    let grad = smooth.grad(&x);
    let min_value = smooth.value(&x) + h.value(&x);
    let mu = smooth.mu();
    CompositeProblem::new(
        smooth,
        h,
        mu,
        Some(CompositeTruth {
            minimizer: x,
            min_value,
            grad_at_min: grad,
        }),
    )
}

/// Quadratic `g` as in [`make_quadratic`] whose unconstrained minimizer sits
/// outside the region where `h` is active, plus `h` of the given kind.
///
/// The displacement is twice the feasible radius: `2r` for a ball, twice the
/// half-width (in the max norm) for a box, and for `l1` the minimizer is
/// scaled so that `|∇g(0)|_∞ = 2·weight`.
pub fn make_composite(spec: &QuadraticSpec, kind: CompositeKind, seed: u64) -> Result<CompositeProblem> {
    check_constants(spec.dim, spec.mu, spec.lip_grad)?;
    let mut rng = derive_rng(seed, &[1]);
    let sp = spectral(spec, &mut rng);
    let a = sp.matrix();
    let dir = gaussian_vec(&mut rng, spec.dim);
    let noise = Noise::new(spec.tail, spec.sigma2, spec.dim)?;
    let (center, h): (Vec<f64>, Arc<dyn Regularizer>) = match kind {
        CompositeKind::Ball { radius } => {
            if !(radius > 0.0) {
                return Err(Error::invalid("ball radius must be positive"));
            }
            let s = 2.0 * radius / norm(&dir);
            (dir.iter().map(|v| v * s).collect(), Arc::new(BallIndicator { radius }))
        }
        CompositeKind::Box { lo, hi } => {
            if !(hi > lo) {
                return Err(Error::invalid("box needs lo < hi"));
            }
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            let inf = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (
                dir.iter().map(|v| mid + 2.0 * half * v / inf).collect(),
                Arc::new(BoxIndicator { lo, hi }),
            )
        }
        CompositeKind::L1 { weight } => {
            if !(weight > 0.0) {
                return Err(Error::invalid("l1 weight must be positive"));
            }
            let ad = (&a * nalgebra::DVector::from_column_slice(&dir)).amax();
            (
                dir.iter().map(|v| v * 2.0 * weight / ad).collect(),
                Arc::new(L1 { weight }),
            )
        }
    };
    let model = QuadraticModel::new(a, center.clone(), 0.0, noise)?;
    let smooth = ProblemInstance::new(Arc::new(model), spec.mu, spec.lip_grad, spec.sigma2, None)?;
    match kind {
        CompositeKind::Ball { radius } => {
            let x = ball_minimizer(&sp, &center, radius);
            truth_at(smooth, h, x)
        }
        _ => composite_with_truth(smooth, h),
    }
}

/// `f(x) - f*`, with rounding below zero clamped away.
pub fn true_gap(problem: &ProblemInstance, x: &[f64]) -> Result<f64> {
    let gt = problem.ground_truth().ok_or(Error::MissingGroundTruth("gap"))?;
    floor_gap(problem.gap(x)?, gt.min_value)
}

/// Composite `f(x) - f*`; `+∞` outside the domain of `h`.
pub fn true_composite_gap(problem: &CompositeProblem, x: &[f64]) -> Result<f64> {
    let gt = problem
        .ground_truth()
        .ok_or(Error::MissingGroundTruth("composite gap"))?;
    floor_gap(problem.gap(x)?, gt.min_value)
}

fn floor_gap(gap: f64, f_star: f64) -> Result<f64> {
    let floor = -1e-12 * (1.0 + f_star.abs());
    if gap >= 0.0 || gap.is_nan() {
        Ok(gap)
    } else if gap >= floor {
        Ok(0.0)
    } else {
        Err(Error::Invariant(format!("gap {gap:e} is below the reported minimum")))
    }
}

/// A point `x̄ + t·u` with `f - f* = gap`, `u` a random unit direction.
pub fn point_at_gap(problem: &ProblemInstance, gap: f64, seed: u64) -> Result<Vec<f64>> {
    let gt = problem
        .ground_truth()
        .ok_or(Error::MissingGroundTruth("initial point"))?;
    let mut rng = derive_rng(seed, &[2]);
    let u = gaussian_vec(&mut rng, problem.dim());
    let nu = norm(&u);
    let u: Vec<f64> = u.iter().map(|v| v / nu).collect();
    let probe: Vec<f64> = gt.minimizer.iter().zip(&u).map(|(x, v)| x + v).collect();
    let unit_gap = problem.value(&probe) - gt.min_value;
    let t = (gap / unit_gap).sqrt();
    Ok(gt.minimizer.iter().zip(&u).map(|(x, v)| x + t * v).collect())
}

/// KKT residual `|x - prox_h(x - ∇g(x))|` of a composite point.
pub fn kkt_residual(problem: &CompositeProblem, x: &[f64]) -> f64 {
    let g = problem.smooth().grad(x);
    let v: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b).collect();
    dist_sq(x, &problem.prox(&v, 1.0)).sqrt()
}
