//! Closed convex regularizers `h` with cheap proximal maps.

use std::fmt::Debug;

use crate::linalg::norm;

/// A closed convex function `h: R^d -> R ∪ {+∞}` with an exact proximal map.
pub trait Regularizer: Send + Sync + Debug {
    /// `h(x)`, `f64::INFINITY` outside the domain.
    fn value(&self, x: &[f64]) -> f64;

    /// Writes `argmin_y h(y) + ||y - x||^2 / (2 step)` into `out`.
    fn prox(&self, x: &[f64], step: f64, out: &mut [f64]);

    fn name(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Zero;

impl Regularizer for Zero {
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn prox(&self, x: &[f64], _step: f64, out: &mut [f64]) {
        out.copy_from_slice(x);
    }

    fn name(&self) -> String {
        "zero".into()
    }
}

/// Indicator of the centered Euclidean ball of the given radius.
#[derive(Debug, Clone, Copy)]
pub struct BallIndicator {
    pub radius: f64,
}

impl BallIndicator {
    // Points within this relative slack of the sphere count as feasible.
    const SLACK: f64 = 1e-12;
}

impl Regularizer for BallIndicator {
    fn value(&self, x: &[f64]) -> f64 {
        if norm(x) <= self.radius * (1.0 + Self::SLACK) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    fn prox(&self, x: &[f64], _step: f64, out: &mut [f64]) {
        let n = norm(x);
        let scale = if n > self.radius { self.radius / n } else { 1.0 };
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi * scale;
        }
    }

    fn name(&self) -> String {
        format!("ball(radius={})", self.radius)
    }
}

/// Indicator of the box `[lo, hi]^d`.
#[derive(Debug, Clone, Copy)]
pub struct BoxIndicator {
    pub lo: f64,
    pub hi: f64,
}

impl Regularizer for BoxIndicator {
    fn value(&self, x: &[f64]) -> f64 {
        let lo = self.lo - 1e-12 * (1.0 + self.lo.abs());
        let hi = self.hi + 1e-12 * (1.0 + self.hi.abs());
        if x.iter().all(|&v| v >= lo && v <= hi) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    fn prox(&self, x: &[f64], _step: f64, out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = xi.clamp(self.lo, self.hi);
        }
    }

    fn name(&self) -> String {
        format!("box(lo={}, hi={})", self.lo, self.hi)
    }
}

/// `weight * ||x||_1`; the proximal map is soft thresholding.
#[derive(Debug, Clone, Copy)]
pub struct L1 {
    pub weight: f64,
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl Regularizer for L1 {
    fn value(&self, x: &[f64]) -> f64 {
        self.weight * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn prox(&self, x: &[f64], step: f64, out: &mut [f64]) {
        let t = self.weight * step;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = soft_threshold(xi, t);
        }
    }

    fn name(&self) -> String {
        format!("l1(weight={})", self.weight)
    }
}

/// `h(x) = slope * x` on `[0, ∞)`, `+∞` otherwise (1-D test fixture).
#[derive(Debug, Clone, Copy)]
pub struct LinearOnHalfLine {
    pub slope: f64,
}

impl Regularizer for LinearOnHalfLine {
    fn value(&self, x: &[f64]) -> f64 {
        if x[0] >= 0.0 {
            self.slope * x[0]
        } else {
            f64::INFINITY
        }
    }

    fn prox(&self, x: &[f64], step: f64, out: &mut [f64]) {
        out[0] = (x[0] - step * self.slope).max(0.0);
    }

    fn name(&self) -> String {
        format!("halfline(slope={})", self.slope)
    }
}
