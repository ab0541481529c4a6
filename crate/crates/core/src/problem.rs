//! Problem abstractions shared by every algorithm: smooth strongly convex
//! objectives with stochastic gradient access, and composite objectives
//! `g + h` with a proximable `h`.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot, norm, spd_solve};
use crate::regularizer::Regularizer;
use crate::rng::RngStream;

/// First-order access to a smooth objective.
pub trait GradientModel: Send + Sync + Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn grad(&self, x: &[f64], out: &mut [f64]);

    /// One unbiased stochastic gradient sample at `x`.
    fn stoch_grad(&self, x: &[f64], rng: &mut RngStream, out: &mut [f64]);

    /// Constant Hessian, for quadratic objectives only.
    fn hessian(&self) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub minimizer: Vec<f64>,
    pub min_value: f64,
}

/// A smooth, strongly convex objective with its constants.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    model: Arc<dyn GradientModel>,
    mu: f64,
    lip_grad: f64,
    sigma2: f64,
    ground_truth: Option<GroundTruth>,
}

/// `L / mu`, rejecting `L < mu` and nonpositive `mu`.
pub fn condition_number(mu: f64, lip_grad: f64) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!("strong convexity must be positive, got {mu}")));
    }
    if !(lip_grad >= mu && lip_grad.is_finite()) {
        return Err(Error::Invariant(format!(
            "gradient Lipschitz constant {lip_grad} is below strong convexity {mu}"
        )));
    }
    Ok(lip_grad / mu)
}

impl ProblemInstance {
    pub fn new(
        model: Arc<dyn GradientModel>,
        mu: f64,
        lip_grad: f64,
        sigma2: f64,
        ground_truth: Option<GroundTruth>,
    ) -> Result<Self> {
        condition_number(mu, lip_grad)?;
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid(format!(
                "variance bound must be finite and nonnegative, got {sigma2}"
            )));
        }
        if let Some(gt) = &ground_truth {
            if gt.minimizer.len() != model.dim() {
                return Err(Error::invalid("ground-truth minimizer has the wrong dimension"));
            }
            let mut g = vec![0.0; model.dim()];
            model.grad(&gt.minimizer, &mut g);
            let tol = 1e-8 * lip_grad * (1.0 + norm(&gt.minimizer));
            if norm(&g) > tol {
                return Err(Error::Invariant(format!(
                    "gradient norm {:e} at the reported minimizer exceeds {tol:e}",
                    norm(&g)
                )));
            }
            let v = model.value(&gt.minimizer);
            if (v - gt.min_value).abs() > 1e-12 * (1.0 + gt.min_value.abs()) {
                return Err(Error::Invariant(format!(
                    "reported minimum {} differs from objective value {v}",
                    gt.min_value
                )));
            }
        }
        Ok(Self {
            model,
            mu,
            lip_grad,
            sigma2,
            ground_truth,
        })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lip_grad(&self) -> f64 {
        self.lip_grad
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn condition_number(&self) -> f64 {
        self.lip_grad / self.mu
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }

    pub fn model(&self) -> &Arc<dyn GradientModel> {
        &self.model
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.model.value(x)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.model.grad(x, &mut g);
        g
    }

    pub fn stoch_grad_into(&self, x: &[f64], rng: &mut RngStream, out: &mut [f64]) {
        self.model.stoch_grad(x, rng, out)
    }

    /// `f(x) - f*`.
    pub fn gap(&self, x: &[f64]) -> Result<f64> {
        let gt = self.ground_truth.as_ref().ok_or(Error::MissingGroundTruth("gap"))?;
        Ok(self.value(x) - gt.min_value)
    }

    /// The proximal subproblem `y -> f(y) + lambda/2 ||y - center||^2`.
    ///
    /// For quadratic objectives the exact minimizer is attached as ground truth.
    pub fn proximal(&self, lambda: f64, center: &[f64]) -> Result<ProblemInstance> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "proximal amplitude must be nonnegative, got {lambda}"
            )));
        }
        let model: Arc<dyn GradientModel> = Arc::new(ProxShifted {
            inner: self.model.clone(),
            lambda,
            center: center.to_vec(),
        });
        let ground_truth = quadratic_minimizer(model.as_ref()).map(|minimizer| GroundTruth {
            min_value: model.value(&minimizer),
            minimizer,
        });
        ProblemInstance::new(
            model,
            self.mu + lambda,
            self.lip_grad + lambda,
            self.sigma2,
            ground_truth,
        )
    }
}

/// Exact minimizer of a strongly convex quadratic model: solves `H y = -∇φ(0)`.
pub fn quadratic_minimizer(model: &dyn GradientModel) -> Option<Vec<f64>> {
    let h = model.hessian()?;
    let d = model.dim();
    let mut g0 = vec![0.0; d];
    model.grad(&vec![0.0; d], &mut g0);
    let rhs: Vec<f64> = g0.iter().map(|v| -v).collect();
    spd_solve(&h, &rhs)
}

/// `y -> inner(y) + lambda/2 ||y - center||^2`.
#[derive(Debug)]
pub struct ProxShifted {
    pub inner: Arc<dyn GradientModel>,
    pub lambda: f64,
    pub center: Vec<f64>,
}

impl GradientModel for ProxShifted {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x) + 0.5 * self.lambda * dist_sq(x, &self.center)
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        self.inner.grad(x, out);
        for ((o, xi), ci) in out.iter_mut().zip(x).zip(&self.center) {
            *o += self.lambda * (xi - ci);
        }
    }

    fn stoch_grad(&self, x: &[f64], rng: &mut RngStream, out: &mut [f64]) {
        self.inner.stoch_grad(x, rng, out);
        for ((o, xi), ci) in out.iter_mut().zip(x).zip(&self.center) {
            *o += self.lambda * (xi - ci);
        }
    }

    fn hessian(&self) -> Option<DMatrix<f64>> {
        let h = self.inner.hessian()?;
        let d = h.nrows();
        Some(h + DMatrix::identity(d, d) * self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeTruth {
    pub minimizer: Vec<f64>,
    pub min_value: f64,
    /// `∇g` at the minimizer.
    pub grad_at_min: Vec<f64>,
}

/// `f = g + h` with `g` smooth and `h` closed convex.
#[derive(Debug, Clone)]
pub struct CompositeProblem {
    smooth: ProblemInstance,
    regularizer: Arc<dyn Regularizer>,
    combined_mu: f64,
    ground_truth: Option<CompositeTruth>,
}

impl CompositeProblem {
    pub fn new(
        smooth: ProblemInstance,
        regularizer: Arc<dyn Regularizer>,
        combined_mu: f64,
        ground_truth: Option<CompositeTruth>,
    ) -> Result<Self> {
        if !(combined_mu > 0.0) {
            return Err(Error::invalid("combined strong convexity must be positive"));
        }
        if let Some(gt) = &ground_truth {
            let v = smooth.value(&gt.minimizer) + regularizer.value(&gt.minimizer);
            if !v.is_finite() || (v - gt.min_value).abs() > 1e-10 * (1.0 + gt.min_value.abs()) {
                return Err(Error::Invariant(format!(
                    "reported composite minimum {} differs from objective value {v}",
                    gt.min_value
                )));
            }
        }
        Ok(Self {
            smooth,
            regularizer,
            combined_mu,
            ground_truth,
        })
    }

    pub fn smooth(&self) -> &ProblemInstance {
        &self.smooth
    }

    pub fn regularizer(&self) -> &Arc<dyn Regularizer> {
        &self.regularizer
    }

    pub fn dim(&self) -> usize {
        self.smooth.dim()
    }

    pub fn mu(&self) -> f64 {
        self.combined_mu
    }

    pub fn lip_grad(&self) -> f64 {
        self.smooth.lip_grad()
    }

    /// Condition number of the smooth part against the combined strong convexity.
    pub fn condition_number(&self) -> f64 {
        self.smooth.lip_grad() / self.combined_mu
    }

    pub fn ground_truth(&self) -> Option<&CompositeTruth> {
        self.ground_truth.as_ref()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let h = self.regularizer.value(x);
        if h.is_infinite() {
            return f64::INFINITY;
        }
        self.smooth.value(x) + h
    }

    pub fn gap(&self, x: &[f64]) -> Result<f64> {
        let gt = self
            .ground_truth
            .as_ref()
            .ok_or(Error::MissingGroundTruth("composite gap"))?;
        Ok(self.value(x) - gt.min_value)
    }

    /// `D_h(x, x̄) = h(x) - h(x̄) + <∇g(x̄), x - x̄>`.
    pub fn bregman_gap(&self, x: &[f64]) -> Result<f64> {
        let gt = self
            .ground_truth
            .as_ref()
            .ok_or(Error::MissingGroundTruth("bregman gap"))?;
        let hx = self.regularizer.value(x);
        if hx.is_infinite() {
            return Ok(f64::INFINITY);
        }
        let shift: Vec<f64> = x.iter().zip(&gt.minimizer).map(|(a, b)| a - b).collect();
        Ok(hx - self.regularizer.value(&gt.minimizer) + dot(&gt.grad_at_min, &shift))
    }

    pub fn prox(&self, x: &[f64], step: f64) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.regularizer.prox(x, step, &mut out);
        out
    }

    /// `y -> g(y) + lambda/2 ||y - center||^2 + h(y)` without ground truth.
    pub fn proximal(&self, lambda: f64, center: &[f64]) -> Result<CompositeProblem> {
        let smooth = self.smooth.proximal(lambda, center)?;
        let smooth = ProblemInstance::new(
            smooth.model().clone(),
            smooth.mu(),
            smooth.lip_grad(),
            smooth.sigma2(),
            None,
        )?;
        CompositeProblem::new(smooth, self.regularizer.clone(), self.combined_mu + lambda, None)
    }

    /// Replaces the ground truth, validating it against the objective.
    pub fn with_ground_truth(self, gt: CompositeTruth) -> Result<Self> {
        CompositeProblem::new(self.smooth, self.regularizer, self.combined_mu, Some(gt))
    }
}

/// Slacks of `mu/2 |x - x̄|^2 <= f(x) - f* <= L/2 |x - x̄|^2`, as
/// `(gap - lower, upper - gap)`.
pub fn two_sided_slack(problem: &ProblemInstance, x: &[f64]) -> Result<(f64, f64)> {
    let gt = problem
        .ground_truth()
        .ok_or(Error::MissingGroundTruth("two-sided bound"))?;
    let gap = problem.value(x) - gt.min_value;
    let d2 = dist_sq(x, &gt.minimizer);
    Ok((gap - 0.5 * problem.mu() * d2, 0.5 * problem.lip_grad() * d2 - gap))
}

/// Slacks of `D_h + mu/2 |x - x̄|^2 <= f(x) - f* <= D_h + L/2 |x - x̄|^2`.
pub fn composite_two_sided_slack(problem: &CompositeProblem, x: &[f64]) -> Result<(f64, f64)> {
    let gt = problem
        .ground_truth()
        .ok_or(Error::MissingGroundTruth("composite two-sided bound"))?;
    let gap = problem.gap(x)?;
    let dh = problem.bregman_gap(x)?;
    let d2 = dist_sq(x, &gt.minimizer);
    Ok((
        gap - dh - 0.5 * problem.smooth().mu() * d2,
        dh + 0.5 * problem.lip_grad() * d2 - gap,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    struct Scalar {
        a: f64,
    }

    impl GradientModel for Scalar {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64]) -> f64 {
            0.5 * self.a * x[0] * x[0]
        }
        fn grad(&self, x: &[f64], out: &mut [f64]) {
            out[0] = self.a * x[0];
        }
        fn stoch_grad(&self, x: &[f64], _rng: &mut RngStream, out: &mut [f64]) {
            self.grad(x, out)
        }
        fn hessian(&self) -> Option<DMatrix<f64>> {
            Some(DMatrix::from_element(1, 1, self.a))
        }
    }

    #[test]
    fn condition_number_examples() {
        assert_eq!(condition_number(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(condition_number(0.5, 50.0).unwrap(), 100.0);
        assert!(matches!(condition_number(2.0, 1.0), Err(Error::Invariant(_))));
        assert!(condition_number(0.0, 1.0).is_err());
    }

    #[test]
    fn rejects_wrong_ground_truth() {
        let gt = GroundTruth {
            minimizer: vec![1.0],
            min_value: 0.5,
        };
        assert!(ProblemInstance::new(Arc::new(Scalar { a: 1.0 }), 1.0, 1.0, 0.0, Some(gt)).is_err());
    }

    #[test]
    fn proximal_subproblem_has_closed_form_truth() {
        let p = ProblemInstance::new(
            Arc::new(Scalar { a: 1.0 }),
            1.0,
            1.0,
            0.0,
            Some(GroundTruth {
                minimizer: vec![0.0],
                min_value: 0.0,
            }),
        )
        .unwrap();
        let sub = p.proximal(1.0, &[2.0]).unwrap();
        let gt = sub.ground_truth().unwrap();
        assert!((gt.minimizer[0] - 1.0).abs() < 1e-15);
        assert!((gt.min_value - 1.0).abs() < 1e-15);
        assert_eq!(sub.mu(), 2.0);
        assert_eq!(sub.lip_grad(), 2.0);
    }
}
