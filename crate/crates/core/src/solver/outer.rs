use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::blocks::newton_blocks;
use super::inner::{inner_maximize_rows, moment_rows, InnerSolution};
use super::SolverOptions;
use crate::error::{GelError, Result};
use crate::kernel::DivergenceKernel;
use crate::model::MomentModel;
use crate::sample::Sample;

/// Profiled objective at θ with its envelope gradient.
#[derive(Debug, Clone)]
pub struct Profile {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub inner: InnerSolution,
    /// γ̂ + λ̂ᵗΦ(θ, Xᵢ)
    pub arguments: DVector<f64>,
}

/// Inner value and the gradient −P_n[∇Φ λ̂ Λ′(γ̂ + λ̂ᵗΦ)] with (γ̂, λ̂) held
/// fixed.
pub fn profile_objective(
    model: &MomentModel,
    sample: &Sample,
    kernel: &DivergenceKernel,
    theta: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<Profile> {
    let phi = moment_rows(model, sample, theta)?;
    let inner = inner_maximize_rows(&phi, kernel, opts)?;
    let lambda = inner.lambda_vec();
    let arguments = inner.arguments(&phi);
    let mut gradient = DVector::zeros(theta.len());
    for (x, s) in sample.rows().zip(arguments.iter()) {
        let g = model.grad_phi(theta, x);
        gradient.gemv(-kernel.lambda1(*s), &g, &lambda, 1.0);
    }
    gradient /= sample.n() as f64;
    Ok(Profile {
        value: inner.value,
        gradient,
        inner,
        arguments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Gradient,
    Step,
    LineSearch,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub theta: Vec<f64>,
    pub value: f64,
    pub projected_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalRun {
    pub start: Vec<f64>,
    pub theta: Vec<f64>,
    pub value: f64,
    pub divergence: f64,
    pub projected_grad_norm: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterTrace {
    pub grid_size: usize,
    pub feasible_starts: usize,
    pub runs: Vec<LocalRun>,
    /// Index into `runs` of the selected local minimum.
    pub selected: usize,
    /// Iteration history of the selected run.
    pub history: Vec<TraceStep>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaddleSolution {
    pub theta_hat: Vec<f64>,
    pub inner: InnerSolution,
    /// wᵢ = Λ′(γ̂ + λ̂ᵗΦ(θ̂, Xᵢ))
    pub weights: Vec<f64>,
    pub divergence: f64,
    /// Smallest eigenvalue of the Jacobian of h_n at (θ̂, λ̂); `None` when the
    /// blocks cannot be evaluated there.
    pub rho: Option<f64>,
    /// Smallest eigenvalue modulus of the same Jacobian.
    pub rho_abs: Option<f64>,
    pub negative_weights: usize,
    pub trace: OuterTrace,
}

impl SaddleSolution {
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta_hat)
    }
}

struct Ctx<'a> {
    model: &'a MomentModel,
    sample: &'a Sample,
    kernel: &'a DivergenceKernel,
    opts: &'a SolverOptions,
}

impl Ctx<'_> {
    fn profile(&self, theta: &DVector<f64>) -> Result<Profile> {
        profile_objective(self.model, self.sample, self.kernel, theta, self.opts)
    }

    fn projected_gradient(&self, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        let b = self.model.theta_box();
        DVector::from_fn(x.len(), |j, _| {
            let blocked = (x[j] <= b.lower()[j] && g[j] > 0.0) || (x[j] >= b.upper()[j] && g[j] < 0.0);
            if blocked {
                0.0
            } else {
                g[j]
            }
        })
    }

    fn divergence(&self, p: &Profile) -> f64 {
        let w: Vec<f64> = p.arguments.iter().map(|s| self.kernel.lambda1(*s)).collect();
        self.kernel.divergence_value(&w).unwrap_or(f64::INFINITY)
    }

    /// Projected BFGS with backtracking from a feasible start.
    fn descend(&self, start: &DVector<f64>, mut prof: Profile) -> (LocalRun, Profile, Vec<TraceStep>) {
        let b = self.model.theta_box();
        let dim = start.len();
        let max_len = 0.25 * b.max_width();
        let mut x = start.clone();
        let mut hinv = DMatrix::<f64>::identity(dim, dim);
        let mut scaled = false;
        let mut history = Vec::new();
        let mut stop = StopReason::MaxIterations;
        let mut iterations = 0;

        for it in 0..self.opts.outer_max_iter {
            iterations = it;
            let g = prof.gradient.clone();
            let pg = self.projected_gradient(&x, &g);
            history.push(TraceStep {
                theta: x.iter().copied().collect(),
                value: prof.value,
                projected_grad_norm: pg.norm(),
            });
            if pg.norm() <= self.opts.outer_tol {
                stop = StopReason::Gradient;
                break;
            }

            let mut p = -(&hinv * &g);
            for j in 0..dim {
                if pg[j] == 0.0 {
                    p[j] = 0.0;
                }
            }
            if !(p.dot(&g) < 0.0) {
                hinv.fill_with_identity();
                scaled = false;
                p = -pg.clone();
            }
            let len = p.norm();
            if len > max_len {
                p *= max_len / len;
            }

            let slack = 16.0 * f64::EPSILON * (1.0 + prof.value.abs());
            let mut t = 1.0;
            let mut accepted = None;
            while t > 1e-20 {
                let trial = b.project(&(&x + &p * t));
                let s = &trial - &x;
                if s.norm() == 0.0 {
                    break;
                }
                if let Ok(tp) = self.profile(&trial) {
                    if tp.value <= prof.value + self.opts.armijo * g.dot(&s) + slack {
                        accepted = Some((trial, tp));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((trial, next)) = accepted else {
                stop = StopReason::LineSearch;
                break;
            };

            let s = &trial - &x;
            let y = &next.gradient - &g;
            let sy = s.dot(&y);
            if sy > 1e-14 * s.norm() * y.norm() && sy > 0.0 {
                if !scaled {
                    hinv *= sy / y.norm_squared();
                    scaled = true;
                }
                let rho = 1.0 / sy;
                let i = DMatrix::<f64>::identity(dim, dim);
                let left = &i - (&s * y.transpose()) * rho;
                let right = &i - (&y * s.transpose()) * rho;
                hinv = &left * &hinv * &right + (&s * s.transpose()) * rho;
            }
            x = trial;
            prof = next;
            iterations = it + 1;
            if s.norm() <= self.opts.step_tol * (1.0 + x.norm()) {
                stop = StopReason::Step;
                let pg = self.projected_gradient(&x, &prof.gradient);
                history.push(TraceStep {
                    theta: x.iter().copied().collect(),
                    value: prof.value,
                    projected_grad_norm: pg.norm(),
                });
                break;
            }
        }

        let pg_norm = self.projected_gradient(&x, &prof.gradient).norm();
        let run = LocalRun {
            start: start.iter().copied().collect(),
            theta: x.iter().copied().collect(),
            value: prof.value,
            divergence: self.divergence(&prof),
            projected_grad_norm: pg_norm,
            iterations,
            stop,
        };
        (run, prof, history)
    }
}

/// Lexicographic order on parameter vectors.
fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Multistart minimization of the profile over the parameter box.
///
/// Among local minima whose values lie within `value_tol` of the best, the
/// one with the smallest divergence wins, then the lexicographically
/// smallest θ̂.
pub fn outer_minimize(
    model: &MomentModel,
    sample: &Sample,
    kernel: &DivergenceKernel,
    opts: &SolverOptions,
) -> Result<SaddleSolution> {
    let ctx = Ctx {
        model,
        sample,
        kernel,
        opts,
    };
    let grid = model.theta_box().grid(opts.grid_points);
    let grid_size = grid.len();

    let mut first_conditioning = None;
    let mut results = Vec::new();
    for start in &grid {
        match ctx.profile(start) {
            Ok(p) => results.push(ctx.descend(start, p)),
            Err(e @ GelError::Conditioning { .. }) => {
                first_conditioning.get_or_insert(e);
            }
            Err(GelError::Evaluation { .. }) | Err(_) => {}
        }
    }
    if results.is_empty() {
        return Err(first_conditioning.unwrap_or(GelError::GloballyInfeasible));
    }

    let best_value = results
        .iter()
        .map(|(r, _, _)| r.value)
        .fold(f64::INFINITY, f64::min);
    let selected = results
        .iter()
        .enumerate()
        .filter(|(_, (r, _, _))| r.value <= best_value + opts.value_tol)
        .min_by(|(_, (a, _, _)), (_, (b, _, _))| {
            a.divergence
                .total_cmp(&b.divergence)
                .then_with(|| lex_cmp(&a.theta, &b.theta))
        })
        .map(|(i, _)| i)
        .expect("at least one candidate");

    let feasible_starts = results.len();
    let runs: Vec<LocalRun> = results.iter().map(|(r, _, _)| r.clone()).collect();
    let (run, prof, history) = results.swap_remove(selected);

    let theta = DVector::from_column_slice(&run.theta);
    let weights: Vec<f64> = prof.arguments.iter().map(|s| kernel.lambda1(*s)).collect();
    let negative_weights = weights.iter().filter(|w| **w < 0.0).count();
    let divergence = kernel.divergence_value(&weights)?;

    let (rho, rho_abs) = match newton_blocks(model, sample, kernel, &theta, &prof.inner.lambda_vec()) {
        Ok(blocks) => {
            let ev = blocks.eigenvalues();
            let abs = ev.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);
            (ev.first().copied(), Some(abs))
        }
        Err(_) => (None, None),
    };

    Ok(SaddleSolution {
        theta_hat: run.theta.clone(),
        inner: prof.inner,
        weights,
        divergence,
        rho,
        rho_abs,
        negative_weights,
        trace: OuterTrace {
            grid_size,
            feasible_starts,
            runs,
            selected,
            history,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelName;
    use crate::model::{builtin_model, ModelParams};

    #[test]
    fn just_identified_mean_for_every_kernel() {
        let model = builtin_model("mean", &ModelParams::default()).unwrap();
        let s = Sample::from_column(&[1.0, 2.0, 3.0]).unwrap();
        for name in KernelName::ALL {
            let k = DivergenceKernel::builtin(name);
            let sol = outer_minimize(&model, &s, &k, &SolverOptions::default()).unwrap();
            assert!((sol.theta_hat[0] - 2.0).abs() < 1e-8, "{name}: {:?}", sol.theta_hat);
            assert!(sol.weights.iter().all(|w| (w - 1.0).abs() < 1e-8));
            assert!(sol.divergence.abs() < 1e-12);
            assert_eq!(sol.negative_weights, 0);
        }
    }

    #[test]
    fn profile_at_root_is_flat() {
        let model = builtin_model("mean", &ModelParams::default()).unwrap();
        let s = Sample::from_column(&[1.0, 2.0, 3.0]).unwrap();
        let k = DivergenceKernel::builtin(KernelName::ExponentialEl);
        let p = profile_objective(&model, &s, &k, &DVector::from_element(1, 2.0), &SolverOptions::default()).unwrap();
        assert_eq!(p.value, 0.0);
        assert_eq!(p.gradient[0], 0.0);
    }

    #[test]
    fn envelope_gradient_matches_finite_difference() {
        let model = builtin_model("mean", &ModelParams::default()).unwrap();
        let s = Sample::from_column(&[1.0, 2.0, 3.0]).unwrap();
        let k = DivergenceKernel::builtin(KernelName::PoissonEt);
        let o = SolverOptions::default();
        let f = |t: f64| profile_objective(&model, &s, &k, &DVector::from_element(1, t), &o).unwrap();
        let h = 1e-5;
        let fd = (f(2.3 + h).value - f(2.3 - h).value) / (2.0 * h);
        assert!((fd - f(2.3).gradient[0]).abs() < 1e-5);
    }

    #[test]
    fn globally_infeasible_is_reported() {
        // weighted variance of points in [1, 2] cannot reach σ₀² = 1 with
        // positive weights
        let model = builtin_model(
            "mean-variance",
            &ModelParams {
                sigma2: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        let s = Sample::from_column(&[1.0, 1.5, 2.0]).unwrap();
        let k = DivergenceKernel::builtin(KernelName::ExponentialEl);
        let err = outer_minimize(&model, &s, &k, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, GelError::GloballyInfeasible), "{err}");
    }

    #[test]
    fn lexicographic_order() {
        assert_eq!(lex_cmp(&[1.0, 2.0], &[1.0, 3.0]), Ordering::Less);
        assert_eq!(lex_cmp(&[2.0], &[1.0]), Ordering::Greater);
    }
}
