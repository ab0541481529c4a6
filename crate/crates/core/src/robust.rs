//! Robust distance estimation: selecting a point that is close to the truth
//! whenever a strict majority of independent candidates is.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{dist, dot};
use crate::problem::ProblemInstance;
use crate::regularizer::Regularizer;
use crate::rng::RngStream;

/// A symmetric, nonnegative distance satisfying the triangle inequality.
#[derive(Clone)]
pub enum Pseudometric {
    Euclidean,
    ScaledEuclidean(f64),
    /// `|h(x) - h(x') + <g, x - x'>|`.
    LinearizedBregman {
        h: Arc<dyn Regularizer>,
        grad: Vec<f64>,
    },
}

impl fmt::Debug for Pseudometric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pseudometric::Euclidean => f.write_str("Euclidean"),
            Pseudometric::ScaledEuclidean(s) => write!(f, "ScaledEuclidean({s})"),
            Pseudometric::LinearizedBregman { h, grad } => f
                .debug_struct("LinearizedBregman")
                .field("h", &h.name())
                .field("grad", grad)
                .finish(),
        }
    }
}

impl Pseudometric {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Pseudometric::Euclidean => dist(x, y),
            Pseudometric::ScaledEuclidean(s) => s * dist(x, y),
            Pseudometric::LinearizedBregman { h, grad } => {
                if x == y {
                    return 0.0;
                }
                let (hx, hy) = (h.value(x), h.value(y));
                if !hx.is_finite() || !hy.is_finite() {
                    return f64::INFINITY;
                }
                let lin = dot(grad, x) - dot(grad, y);
                (hx - hy + lin).abs()
            }
        }
    }
}

fn nonempty<T>(points: &[T]) -> Result<()> {
    if points.is_empty() {
        Err(Error::invalid("robust estimation needs at least one point"))
    } else {
        Ok(())
    }
}

fn kth_smallest(mut values: Vec<f64>, k: usize) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    values[k]
}

/// Smallest `r` such that the ball of radius `r` around `points[i]` contains a
/// strict majority of the points (the point itself included). Indices are
/// zero-based.
pub fn weak_radius<P: AsRef<[f64]>>(points: &[P], i: usize, rho: &Pseudometric) -> Result<f64> {
    nonempty(points)?;
    if i >= points.len() {
        return Err(Error::invalid(format!(
            "index {i} out of range for {} points",
            points.len()
        )));
    }
    let d = points
        .iter()
        .map(|p| rho.eval(points[i].as_ref(), p.as_ref()))
        .collect();
    Ok(kth_smallest(d, points.len() / 2))
}

/// Weak radii of all points, evaluating each pairwise distance once.
pub fn radii<P: AsRef<[f64]>>(points: &[P], rho: &Pseudometric) -> Result<Vec<f64>> {
    nonempty(points)?;
    let m = points.len();
    let mut table = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let d = rho.eval(points[i].as_ref(), points[j].as_ref());
            table[i * m + j] = d;
            table[j * m + i] = d;
        }
    }
    Ok((0..m)
        .map(|i| kth_smallest(table[i * m..(i + 1) * m].to_vec(), m / 2))
        .collect())
}

/// Index of the smallest radius, lowest index on ties.
pub fn argmin_radius(radii: &[f64]) -> usize {
    let mut best = 0;
    for (i, &r) in radii.iter().enumerate() {
        if r < radii[best] {
            best = i;
        }
    }
    best
}

/// The point with the smallest weak radius.
pub fn robust_select<P: AsRef<[f64]>>(points: &[P], rho: &Pseudometric) -> Result<(usize, Vec<f64>)> {
    let r = radii(points, rho)?;
    let i = argmin_radius(&r);
    Ok((i, points[i].as_ref().to_vec()))
}

/// Indices whose radius is at most the `⌈m/2⌉`-th smallest radius.
pub fn median_cut(radii: &[f64]) -> Vec<usize> {
    if radii.is_empty() {
        return Vec::new();
    }
    let rank = radii.len().div_ceil(2) - 1;
    let cut = kth_smallest(radii.to_vec(), rank);
    (0..radii.len()).filter(|&i| radii[i] <= cut).collect()
}

/// Indices of all points whose weak radius does not exceed the median radius.
pub fn extract<P: AsRef<[f64]>>(points: &[P], rho: &Pseudometric) -> Result<Vec<usize>> {
    Ok(median_cut(&radii(points, rho)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustGradient {
    pub grad: Vec<f64>,
    /// Stochastic gradients averaged per weak query.
    pub batch: u64,
    /// Total stochastic gradient draws, `m * batch`.
    pub draws: u64,
}

/// Per-query batch size `⌈3σ²/ε²⌉`, at least one.
pub fn weak_batch_size(sigma2: f64, eps: f64) -> u64 {
    ((3.0 * sigma2 / (eps * eps)).ceil() as u64).max(1)
}

/// Median-of-means style gradient estimate at `x_hat`: `m` averaged batches
/// on independent child streams, combined by [`robust_select`].
pub fn robust_gradient(
    problem: &ProblemInstance,
    x_hat: &[f64],
    eps: f64,
    m: usize,
    rng: RngStream,
) -> Result<RobustGradient> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("gradient accuracy must be positive, got {eps}")));
    }
    if m == 0 {
        return Err(Error::invalid("robust gradient needs at least one query"));
    }
    let d = problem.dim();
    let batch = weak_batch_size(problem.sigma2(), eps);
    let mut queries = Vec::with_capacity(m);
    let mut g = vec![0.0; d];
    for q in 0..m {
        let mut child = rng.child(q as u64);
        let mut acc = vec![0.0; d];
        for _ in 0..batch {
            problem.stoch_grad_into(x_hat, &mut child, &mut g);
            for (a, gi) in acc.iter_mut().zip(&g) {
                *a += gi;
            }
        }
        for a in &mut acc {
            *a /= batch as f64;
        }
        queries.push(acc);
    }
    let (_, grad) = robust_select(&queries, &Pseudometric::Euclidean)?;
    Ok(RobustGradient {
        grad,
        batch,
        draws: batch * m as u64,
    })
}
