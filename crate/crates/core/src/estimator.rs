//! User-facing estimation: θ̂, the reweighted empirical measure P_n(w), and
//! plug-in standard errors.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GelError, Result};
use crate::kernel::DivergenceKernel;
use crate::linalg::min_eigenvalue;
use crate::model::{sample_moments, validate_assumptions, AssumptionReport, MomentModel};
use crate::sample::Sample;
use crate::solver::{inner_maximize, outer_minimize, OuterTrace, SaddleSolution, SolverOptions};

/// Mean-weight tolerance for P_n(w) to be a probability measure.
pub const WEIGHT_SUM_TOL: f64 = 1e-8;
/// Tolerance on ‖P_n(w)[Φ(θ̂, ·)]‖.
pub const MOMENT_RESIDUAL_TOL: f64 = 1e-6;

pub const VARIANCE_NOTE: &str = "plug-in asymptotic: sqrt(diag((D V^-1 D^t)^-1) / n) at theta_hat";

/// Observations paired with their weights; represents (1/n) Σ wᵢ δ_{Xᵢ}.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub sample: Sample,
    pub weights: Vec<f64>,
}

impl WeightedSample {
    /// (1/n) Σ wᵢ f(Xᵢ)
    pub fn expectation(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.sample
            .rows()
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum::<f64>()
            / self.sample.n() as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub min: f64,
    pub max: f64,
    pub negative_count: usize,
}

impl WeightSummary {
    pub fn of(weights: &[f64]) -> Self {
        WeightSummary {
            min: weights.iter().copied().fold(f64::INFINITY, f64::min),
            max: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            negative_count: weights.iter().filter(|w| **w < 0.0).count(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub model: String,
    pub kernel: String,
    pub n: usize,
    pub theta_hat: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub variance_note: String,
    pub gamma: f64,
    pub lambda: Vec<f64>,
    pub weights: Vec<f64>,
    pub weight_summary: WeightSummary,
    pub divergence: f64,
    pub rho: Option<f64>,
    pub rho_abs: Option<f64>,
    pub diagnostics: AssumptionReport,
    pub trace: OuterTrace,
    pub options: SolverOptions,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    /// Wald interval θ̂ ± z·se for each coordinate.
    pub fn wald_interval(&self, z: f64) -> Vec<(f64, f64)> {
        self.theta_hat
            .iter()
            .zip(&self.std_errors)
            .map(|(t, s)| (t - z * s, t + z * s))
            .collect()
    }
}

impl fmt::Display for EstimateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model: {}   kernel: {}   n: {}", self.model, self.kernel, self.n)?;
        writeln!(f, "{:>8} {:>16} {:>14} {:>16} {:>16}", "param", "estimate", "std.err", "95% lower", "95% upper")?;
        for (j, (lo, hi)) in self.wald_interval(1.959_963_984_540_054).into_iter().enumerate() {
            writeln!(
                f,
                "{:>8} {:>16.10} {:>14.8} {:>16.10} {:>16.10}",
                format!("theta{j}"),
                self.theta_hat[j],
                self.std_errors[j],
                lo,
                hi
            )?;
        }
        writeln!(f, "divergence: {:.6e}", self.divergence)?;
        writeln!(
            f,
            "weights: min {:.6} max {:.6} negative {}",
            self.weight_summary.min, self.weight_summary.max, self.weight_summary.negative_count
        )?;
        match (self.rho, self.rho_abs) {
            (Some(r), Some(a)) => writeln!(f, "jacobian: smallest eigenvalue {r:.6e}, smallest |eigenvalue| {a:.6e}")?,
            _ => writeln!(f, "jacobian: not evaluable at the solution")?,
        }
        writeln!(f, "assumption checks: {}", if self.diagnostics.passed { "pass" } else { "FAIL" })?;
        for m in &self.diagnostics.messages {
            writeln!(f, "  - {m}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        writeln!(f, "std. errors: {}", self.variance_note)
    }
}

/// Reconstructs P_n(w) from a solved saddle point and checks that it
/// satisfies the normalization and moment constraints.
pub fn mem_weights(
    model: &MomentModel,
    sample: &Sample,
    kernel: &DivergenceKernel,
    solution: &SaddleSolution,
) -> Result<WeightedSample> {
    if !solution.inner.converged {
        return Err(GelError::Consistency("inner solution did not converge".into()));
    }
    let theta = solution.theta();
    let lambda = solution.inner.lambda_vec();
    let k = model.dims().k;
    let mut weights = Vec::with_capacity(sample.n());
    let mut residual = DVector::zeros(k);
    for x in sample.rows() {
        let phi = model.phi(&theta, x);
        let w = kernel.lambda1(solution.inner.gamma + lambda.dot(&phi));
        residual.axpy(w, &phi, 1.0);
        weights.push(w);
    }
    let n = sample.n() as f64;
    residual /= n;
    let mass = weights.iter().sum::<f64>() / n;
    if (mass - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(GelError::Consistency(format!(
            "weights average to {mass}, not 1"
        )));
    }
    if residual.norm() > MOMENT_RESIDUAL_TOL {
        return Err(GelError::Consistency(format!(
            "weighted moment residual {:e} exceeds {MOMENT_RESIDUAL_TOL:e}",
            residual.norm()
        )));
    }
    if kernel.weight_lower() >= 0.0 && weights.iter().any(|w| *w <= 0.0) {
        return Err(GelError::Consistency(
            "non-positive weight under a positive-support prior".into(),
        ));
    }
    Ok(WeightedSample {
        sample: sample.clone(),
        weights,
    })
}

/// Efficient-variance plug-in: sqrt(diag((D̂ V̂⁻¹ D̂ᵗ)⁻¹) / n).
pub fn standard_errors(model: &MomentModel, sample: &Sample, theta: &DVector<f64>) -> Result<Vec<f64>> {
    let m = sample_moments(model, sample, theta)?;
    let cov = efficient_covariance(&m.mean_grad, &m.outer)?;
    let n = sample.n() as f64;
    Ok(cov.diagonal().iter().map(|v| (v / n).sqrt()).collect())
}

/// (D V⁻¹ Dᵗ)⁻¹
pub fn efficient_covariance(d: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol_v = v.clone().cholesky().ok_or_else(|| GelError::Conditioning {
        context: "empirical V at theta_hat".into(),
        min_eigenvalue: min_eigenvalue(v),
    })?;
    let info = d * chol_v.solve(&d.transpose());
    let chol_i = info.clone().cholesky().ok_or_else(|| GelError::Conditioning {
        context: "information matrix D V^-1 D^t at theta_hat".into(),
        min_eigenvalue: min_eigenvalue(&info),
    })?;
    Ok(chol_i.inverse())
}

/// Solves the saddle-point program and assembles the report.
pub fn estimate(
    model: &MomentModel,
    sample: &Sample,
    kernel: &DivergenceKernel,
    opts: &SolverOptions,
) -> Result<EstimateReport> {
    opts.validate()?;
    sample.check_for(model)?;
    let solution = outer_minimize(model, sample, kernel, opts)?;
    let weighted = mem_weights(model, sample, kernel, &solution)?;
    let theta = solution.theta();
    let std_errors = standard_errors(model, sample, &theta)?;
    let diagnostics = validate_assumptions(model, sample, &theta);

    let mut warnings = Vec::new();
    if solution.negative_weights > 0 {
        warnings.push(format!(
            "{} observations received negative weight",
            solution.negative_weights
        ));
    }
    if !diagnostics.theta_interior {
        warnings.push("estimate lies on the boundary of the parameter box".into());
    }
    Ok(EstimateReport {
        model: model.name().to_owned(),
        kernel: kernel.name().to_owned(),
        n: sample.n(),
        theta_hat: solution.theta_hat.clone(),
        std_errors,
        variance_note: VARIANCE_NOTE.into(),
        gamma: solution.inner.gamma,
        lambda: solution.inner.lambda.clone(),
        weight_summary: WeightSummary::of(&weighted.weights),
        weights: weighted.weights,
        divergence: solution.divergence,
        rho: solution.rho,
        rho_abs: solution.rho_abs,
        diagnostics,
        trace: solution.trace,
        options: opts.clone(),
        warnings,
    })
}

// ---------------------------------------------------------------------------
// feasibility

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Feasible,
    Infeasible,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeasibilityMethod {
    Interval,
    PlanarHull,
    AffineSpan,
    DualAscent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub verdict: Verdict,
    pub method: FeasibilityMethod,
    /// Signed distance of 0 from the boundary (positive inside), when the
    /// method is geometric.
    pub margin: Option<f64>,
}

/// Margins below this are reported as indeterminate.
pub const FEASIBILITY_MARGIN: f64 = 1e-10;

fn classify(margin: f64) -> Verdict {
    if margin > FEASIBILITY_MARGIN {
        Verdict::Feasible
    } else if margin < -FEASIBILITY_MARGIN {
        Verdict::Infeasible
    } else {
        Verdict::Indeterminate
    }
}

/// Whether some admissible weight vector puts P_n(w) in M_θ.
///
/// For priors on the positive half-line this asks whether 0 lies in the
/// interior of conv{Φ(θ, Xᵢ)} (exact for k ≤ 2); for full-line priors it
/// asks whether the affine constraints are consistent. Other cases fall
/// back to the dual ascent test.
pub fn feasibility_check(
    model: &MomentModel,
    sample: &Sample,
    kernel: &DivergenceKernel,
    theta: &DVector<f64>,
) -> Feasibility {
    let points: Vec<DVector<f64>> = sample.rows().map(|x| model.phi(theta, x)).collect();
    let k = model.dims().k;
    if kernel.weight_lower() == f64::NEG_INFINITY {
        let margin = affine_margin(&points);
        return Feasibility {
            verdict: classify(margin),
            method: FeasibilityMethod::AffineSpan,
            margin: Some(margin),
        };
    }
    if kernel.weight_lower() == 0.0 && k <= 2 {
        let flat: Vec<Vec<f64>> = points.iter().map(|p| p.iter().copied().collect()).collect();
        let (margin, method) = if k == 1 {
            (interval_margin(flat.iter().map(|p| p[0])), FeasibilityMethod::Interval)
        } else {
            (planar_hull_margin(&flat), FeasibilityMethod::PlanarHull)
        };
        return Feasibility {
            verdict: classify(margin),
            method,
            margin: Some(margin),
        };
    }
    let verdict = match inner_maximize(model, sample, kernel, theta, &SolverOptions::default()) {
        Ok(_) => Verdict::Feasible,
        Err(e) if e.is_infeasible() => Verdict::Infeasible,
        Err(_) => Verdict::Indeterminate,
    };
    Feasibility {
        verdict,
        method: FeasibilityMethod::DualAscent,
        margin: None,
    }
}

/// Signed margin of 0 inside the interval spanned by scalar values.
pub fn interval_margin(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    (-lo).min(hi)
}

fn cross(o: &[f64], a: &[f64], b: &[f64]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
pub fn convex_hull(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vec<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p.clone());
        }
        hull.pop();
    }
    hull
}

fn segment_distance(a: &[f64], b: &[f64]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        ((-a[0]) * dx + (-a[1]) * dy) / len2
    } else {
        0.0
    }
    .clamp(0.0, 1.0);
    let (px, py) = (a[0] + t * dx, a[1] + t * dy);
    (px * px + py * py).sqrt()
}

/// Signed distance from 0 to the boundary of the planar hull, positive
/// when 0 is interior. Degenerate hulls have empty interior.
pub fn planar_hull_margin(points: &[Vec<f64>]) -> f64 {
    let hull = convex_hull(points);
    match hull.len() {
        0 => f64::NEG_INFINITY,
        1 => -(hull[0][0].hypot(hull[0][1])),
        2 => -segment_distance(&hull[0], &hull[1]),
        m => {
            let mut inside = f64::INFINITY;
            let mut outside = f64::INFINITY;
            let mut is_inside = true;
            for i in 0..m {
                let (a, b) = (&hull[i], &hull[(i + 1) % m]);
                let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                let signed = cross(a, b, &[0.0, 0.0]) / len;
                if signed <= 0.0 {
                    is_inside = false;
                }
                inside = inside.min(signed);
                outside = outside.min(segment_distance(a, b));
            }
            if is_inside {
                inside
            } else {
                -outside
            }
        }
    }
}

/// Residual of the least-squares solve of Σwᵢ = n, ΣwᵢΦᵢ = 0, negated so
/// that a consistent system has margin +∞ and an inconsistent one a
/// negative margin.
fn affine_margin(points: &[DVector<f64>]) -> f64 {
    let n = points.len();
    let k = points.first().map(|p| p.len()).unwrap_or(0);
    let mut a = DMatrix::zeros(k + 1, n);
    for (i, p) in points.iter().enumerate() {
        a[(0, i)] = 1.0;
        a.view_mut((1, i), (k, 1)).copy_from(p);
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[0] = n as f64;
    let svd = a.clone().svd(true, true);
    let scale = svd.singular_values.max().max(1.0);
    match svd.solve(&rhs, 1e-12 * scale) {
        Ok(w) => {
            let resid = (&a * w - &rhs).norm() / n as f64;
            if resid <= 1e-9 {
                f64::INFINITY
            } else {
                -resid
            }
        }
        Err(_) => f64::NEG_INFINITY,
    }
}
