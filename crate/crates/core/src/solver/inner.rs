use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::SolverOptions;
use crate::error::{GelError, Result};
use crate::kernel::DivergenceKernel;
use crate::linalg::min_eigenvalue;
use crate::model::MomentModel;
use crate::sample::Sample;

/// Maximizer (γ̂, λ̂) of the inner concave program at a fixed θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub gamma: f64,
    pub lambda: Vec<f64>,
    /// γ̂ − P_n[Λ(γ̂ + λ̂ᵗΦ)]
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Objective value after each accepted step, starting at the origin.
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl InnerSolution {
    pub fn lambda_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.lambda)
    }

    /// γ̂ + λ̂ᵗΦ(θ, xᵢ) for each row of `phi`.
    pub fn arguments(&self, phi: &DMatrix<f64>) -> DVector<f64> {
        phi * self.lambda_vec() + DVector::from_element(phi.nrows(), self.gamma)
    }
}

/// Moment values at θ, one row per observation (n×k).
pub(crate) fn moment_rows(model: &MomentModel, sample: &Sample, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let k = model.dims().k;
    let mut phi = DMatrix::zeros(sample.n(), k);
    for (i, x) in sample.rows().enumerate() {
        let v = model.phi(theta, x);
        if v.iter().any(|e| !e.is_finite()) {
            return Err(GelError::Evaluation {
                row: i,
                message: format!("non-finite moment value {:?}", v.as_slice()),
            });
        }
        phi.row_mut(i).copy_from(&v.transpose());
    }
    Ok(phi)
}

struct Objective<'a> {
    kernel: &'a DivergenceKernel,
    /// augmented design with rows (1, Φᵢᵗ)
    design: DMatrix<f64>,
    n: f64,
}

impl Objective<'_> {
    fn arguments(&self, tau: &DVector<f64>) -> DVector<f64> {
        &self.design * tau
    }

    /// −∞ when any argument leaves the kernel domain.
    fn value(&self, tau: &DVector<f64>, args: &DVector<f64>) -> f64 {
        let mut sum = 0.0;
        for &s in args.iter() {
            if !self.kernel.in_domain(s) {
                return f64::NEG_INFINITY;
            }
            sum += self.kernel.lambda(s);
        }
        tau[0] - sum / self.n
    }

    fn gradient(&self, args: &DVector<f64>) -> DVector<f64> {
        let l1 = args.map(|s| self.kernel.lambda1(s));
        let mut g = -(self.design.tr_mul(&l1)) / self.n;
        g[0] += 1.0;
        g
    }

    /// Negated Hessian P_n[(1, Φ)(1, Φ)ᵗ Λ″].
    fn neg_hessian(&self, args: &DVector<f64>) -> DMatrix<f64> {
        let mut weighted = self.design.clone();
        for (i, s) in args.iter().enumerate() {
            let l2 = self.kernel.lambda2(*s);
            weighted.row_mut(i).scale_mut(l2);
        }
        self.design.tr_mul(&weighted) / self.n
    }
}

/// Damped Newton ascent on the inner objective from (γ, λ) = (0, 0).
pub fn inner_maximize(
    model: &MomentModel,
    sample: &Sample,
    kernel: &DivergenceKernel,
    theta: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<InnerSolution> {
    let phi = moment_rows(model, sample, theta)?;
    inner_maximize_rows(&phi, kernel, opts)
}

pub(crate) fn inner_maximize_rows(
    phi: &DMatrix<f64>,
    kernel: &DivergenceKernel,
    opts: &SolverOptions,
) -> Result<InnerSolution> {
    let (n, k) = phi.shape();
    let mut design = DMatrix::from_element(n, k + 1, 1.0);
    design.view_mut((0, 1), (n, k)).copy_from(phi);
    let obj = Objective {
        kernel,
        design,
        n: n as f64,
    };

    let mut tau = DVector::zeros(k + 1);
    let mut args = obj.arguments(&tau);
    let mut value = obj.value(&tau, &args);
    let mut history = vec![value];
    let mut grad = obj.gradient(&args);
    let mut last_step = DVector::zeros(k + 1);

    for iter in 0..opts.inner_max_iter {
        let grad_norm = grad.norm();
        if grad_norm <= opts.inner_tol {
            return Ok(finish(tau, value, true, iter, grad_norm, history));
        }
        if value > opts.divergence_cap || tau.norm() > opts.escape_radius {
            return Err(GelError::infeasible(&last_step.normalize()));
        }

        let neg_h = obj.neg_hessian(&args);
        let Some(chol) = neg_h.clone().cholesky() else {
            // The Hessian at the origin is P_n[(1,Φ)(1,Φ)ᵗ]; if it was regular
            // there, degeneracy later means Λ″ has vanished along an
            // unbounded ascent ray.
            if iter > 0 && value > history[0] {
                return Err(GelError::infeasible(&last_step.normalize()));
            }
            return Err(GelError::Conditioning {
                context: "inner Newton Hessian".into(),
                min_eigenvalue: min_eigenvalue(&neg_h),
            });
        };
        let dir = chol.solve(&grad);
        let slope = grad.dot(&dir);
        if !(slope > 0.0) || dir.iter().any(|v| !v.is_finite()) {
            return Err(GelError::Conditioning {
                context: "inner Newton direction".into(),
                min_eigenvalue: min_eigenvalue(&neg_h),
            });
        }

        // backtracking; trial points outside the kernel domain are rejected
        let slack = 16.0 * f64::EPSILON * (1.0 + value.abs());
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-18 {
            let trial = &tau + &dir * t;
            let trial_args = obj.arguments(&trial);
            let trial_value = obj.value(&trial, &trial_args);
            if trial_value.is_finite() && trial_value >= value + opts.armijo * t * slope - slack {
                accepted = Some((trial, trial_args, trial_value));
                break;
            }
            t *= opts.backtrack;
        }
        let Some((trial, trial_args, trial_value)) = accepted else {
            return Err(GelError::NotConverged(format!(
                "inner line search stalled at iteration {iter} (gradient norm {grad_norm:e})"
            )));
        };
        debug_assert!(trial_value >= value - slack);
        last_step = &trial - &tau;
        tau = trial;
        args = trial_args;
        value = trial_value;
        history.push(value);
        grad = obj.gradient(&args);
    }

    let grad_norm = grad.norm();
    if grad_norm <= opts.inner_tol {
        return Ok(finish(tau, value, true, opts.inner_max_iter, grad_norm, history));
    }
    if value > opts.divergence_cap || tau.norm() > opts.escape_radius {
        return Err(GelError::infeasible(&last_step.normalize()));
    }
    Err(GelError::NotConverged(format!(
        "inner Newton reached {} iterations (gradient norm {grad_norm:e})",
        opts.inner_max_iter
    )))
}

fn finish(
    tau: DVector<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
    grad_norm: f64,
    history: Vec<f64>,
) -> InnerSolution {
    InnerSolution {
        gamma: tau[0],
        lambda: tau.rows(1, tau.len() - 1).iter().copied().collect(),
        value,
        converged,
        iterations,
        grad_norm,
        history,
    }
}
