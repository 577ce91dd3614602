//! Moment condition models E[Φ(θ₀, X)] = 0.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GelError, Result};
use crate::sample::Sample;

/// Second derivatives of Φ: one d×d matrix per moment component.
pub type Hessian = Vec<DMatrix<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// parameter dimension
    pub d: usize,
    /// number of moment conditions
    pub k: usize,
    /// observation dimension
    pub q: usize,
}

/// The constraint map Φ(θ, x) ∈ ℝᵏ with optional analytic derivatives.
///
/// Returning `None` from `grad_phi` or `hess_phi` requests a central
/// finite-difference fallback, which is then flagged in diagnostics.
pub trait MomentFunction: Send + Sync {
    fn dims(&self) -> Dims;

    fn phi(&self, theta: &DVector<f64>, x: &[f64]) -> DVector<f64>;

    /// ∂Φ/∂θ as a d×k matrix.
    fn grad_phi(&self, _theta: &DVector<f64>, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// ∂²Φ/∂θ∂θᵗ as k matrices of size d×d.
    fn hess_phi(&self, _theta: &DVector<f64>, _x: &[f64]) -> Option<Hessian> {
        None
    }

    /// True when both derivative methods return analytic values.
    fn has_analytic_derivatives(&self) -> bool {
        false
    }
}

/// Axis-aligned compact parameter set Θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ThetaBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(GelError::Config(format!(
                "parameter box bounds have mismatched lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (j, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(GelError::Config(format!(
                    "parameter box coordinate {j}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(ThetaBox { lower, upper })
    }

    pub fn symmetric(d: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![-half_width; d], vec![half_width; d])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&t, (&lo, &hi))| t >= lo && t <= hi)
    }

    pub fn contains_interior(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&t, (&lo, &hi))| t > lo && t < hi)
    }

    pub fn project(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(&t, (&lo, &hi))| t.clamp(lo, hi)),
        )
    }

    /// Largest side length.
    pub fn max_width(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max)
    }

    /// Cell-centered grid with `per_dim` points along each coordinate, in
    /// lexicographic order (first coordinate slowest).
    pub fn grid(&self, per_dim: usize) -> Vec<DVector<f64>> {
        let d = self.dim();
        let per_dim = per_dim.max(1);
        let total = per_dim.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                let mut coords = vec![0.0; d];
                for j in (0..d).rev() {
                    let i = idx % per_dim;
                    idx /= per_dim;
                    let w = self.upper[j] - self.lower[j];
                    coords[j] = self.lower[j] + (i as f64 + 0.5) * w / per_dim as f64;
                }
                DVector::from_vec(coords)
            })
            .collect()
    }
}

/// A moment function bound to its parameter box.
#[derive(Clone)]
pub struct MomentModel {
    name: String,
    func: Arc<dyn MomentFunction>,
    theta_box: ThetaBox,
}

impl fmt::Debug for MomentModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MomentModel")
            .field("name", &self.name)
            .field("dims", &self.dims())
            .field("theta_box", &self.theta_box)
            .finish()
    }
}

impl MomentModel {
    pub fn new(
        name: impl Into<String>,
        func: Arc<dyn MomentFunction>,
        theta_box: ThetaBox,
    ) -> Result<Self> {
        let name = name.into();
        let dims = func.dims();
        if dims.d == 0 || dims.q == 0 {
            return Err(GelError::Config(format!(
                "model '{name}': dimensions must be positive"
            )));
        }
        if dims.k < dims.d {
            return Err(GelError::Config(format!(
                "model '{name}': order condition fails (k = {} < d = {})",
                dims.k, dims.d
            )));
        }
        if theta_box.dim() != dims.d {
            return Err(GelError::Config(format!(
                "model '{name}': parameter box has dimension {} but d = {}",
                theta_box.dim(),
                dims.d
            )));
        }
        Ok(MomentModel {
            name,
            func,
            theta_box,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> Dims {
        self.func.dims()
    }

    pub fn theta_box(&self) -> &ThetaBox {
        &self.theta_box
    }

    pub fn with_box(mut self, theta_box: ThetaBox) -> Result<Self> {
        if theta_box.dim() != self.dims().d {
            return Err(GelError::Config(format!(
                "parameter box dimension {} does not match d = {}",
                theta_box.dim(),
                self.dims().d
            )));
        }
        self.theta_box = theta_box;
        Ok(self)
    }

    pub fn function(&self) -> &Arc<dyn MomentFunction> {
        &self.func
    }

    /// Whether derivatives come from finite differences.
    pub fn uses_fd_fallback(&self) -> bool {
        !self.func.has_analytic_derivatives()
    }

    #[inline]
    pub fn phi(&self, theta: &DVector<f64>, x: &[f64]) -> DVector<f64> {
        self.func.phi(theta, x)
    }

    pub fn grad_phi(&self, theta: &DVector<f64>, x: &[f64]) -> DMatrix<f64> {
        self.func
            .grad_phi(theta, x)
            .unwrap_or_else(|| fd_gradient(|t| self.func.phi(t, x), theta, self.dims().k))
    }

    pub fn hess_phi(&self, theta: &DVector<f64>, x: &[f64]) -> Hessian {
        if let Some(h) = self.func.hess_phi(theta, x) {
            return h;
        }
        let Dims { d, k, .. } = self.dims();
        let mut out = vec![DMatrix::zeros(d, d); k];
        for j in 0..d {
            let h = fd_step(theta[j]);
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[j] += h;
            minus[j] -= h;
            let diff = (self.grad_phi(&plus, x) - self.grad_phi(&minus, x)) / (2.0 * h);
            // diff[(i, c)] = ∂²Φ_c / ∂θ_j ∂θ_i
            for (c, block) in out.iter_mut().enumerate() {
                for i in 0..d {
                    block[(i, j)] = diff[(i, c)];
                }
            }
        }
        // symmetrize the numerical second derivatives
        for block in &mut out {
            let t = block.transpose();
            *block = (&*block + t) * 0.5;
        }
        out
    }
}

/// Step h = ε^{1/3}·(1 + |θ|).
fn fd_step(t: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + t.abs())
}

fn fd_gradient(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    theta: &DVector<f64>,
    k: usize,
) -> DMatrix<f64> {
    let d = theta.len();
    let mut g = DMatrix::zeros(d, k);
    for j in 0..d {
        let h = fd_step(theta[j]);
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[j] += h;
        minus[j] -= h;
        let diff = (f(&plus) - f(&minus)) / (2.0 * h);
        g.row_mut(j).copy_from(&diff.transpose());
    }
    g
}

// ---------------------------------------------------------------------------
// built-in models

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelName {
    #[serde(rename = "mean")]
    Mean,
    #[serde(rename = "mean-variance")]
    MeanVariance,
    #[serde(rename = "linear-iv")]
    LinearIv,
}

impl ModelName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Mean => "mean",
            ModelName::MeanVariance => "mean-variance",
            ModelName::LinearIv => "linear-iv",
        }
    }
}

impl FromStr for ModelName {
    type Err = GelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ModelName::Mean),
            "mean-variance" => Ok(ModelName::MeanVariance),
            "linear-iv" => Ok(ModelName::LinearIv),
            _ => Err(GelError::Config(format!(
                "unknown model '{s}' (expected mean, mean-variance or linear-iv)"
            ))),
        }
    }
}

/// Constants for the built-in models.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Known variance σ₀² (mean-variance).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    /// Number of regressors (linear-iv).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Number of instruments (linear-iv).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Parameter box; defaults to [-10, 10]ᵈ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_upper: Option<Vec<f64>>,
}

pub const DEFAULT_BOX_HALF_WIDTH: f64 = 10.0;

/// Φ(θ, x) = x − θ.
#[derive(Debug, Clone, Copy)]
pub struct MeanMoment;

impl MomentFunction for MeanMoment {
    fn dims(&self) -> Dims {
        Dims { d: 1, k: 1, q: 1 }
    }

    fn phi(&self, theta: &DVector<f64>, x: &[f64]) -> DVector<f64> {
        DVector::from_element(1, x[0] - theta[0])
    }

    fn grad_phi(&self, _: &DVector<f64>, _: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, -1.0))
    }

    fn hess_phi(&self, _: &DVector<f64>, _: &[f64]) -> Option<Hessian> {
        Some(vec![DMatrix::zeros(1, 1)])
    }

    fn has_analytic_derivatives(&self) -> bool {
        true
    }
}

/// Φ(θ, x) = (x − θ, x² − θ² − σ₀²) with known σ₀².
#[derive(Debug, Clone, Copy)]
pub struct MeanVarianceMoment {
    pub sigma2: f64,
}

impl MomentFunction for MeanVarianceMoment {
    fn dims(&self) -> Dims {
        Dims { d: 1, k: 2, q: 1 }
    }

    fn phi(&self, theta: &DVector<f64>, x: &[f64]) -> DVector<f64> {
        let (t, x) = (theta[0], x[0]);
        DVector::from_vec(vec![x - t, x * x - t * t - self.sigma2])
    }

    fn grad_phi(&self, theta: &DVector<f64>, _: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, 2, &[-1.0, -2.0 * theta[0]]))
    }

    fn hess_phi(&self, _: &DVector<f64>, _: &[f64]) -> Option<Hessian> {
        Some(vec![DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, -2.0)])
    }

    fn has_analytic_derivatives(&self) -> bool {
        true
    }
}

/// Observation x = (y, w ∈ ℝᵈ, z ∈ ℝᵏ) and Φ(θ, x) = z·(y − wᵗθ).
#[derive(Debug, Clone, Copy)]
pub struct LinearIvMoment {
    pub d: usize,
    pub k: usize,
}

impl LinearIvMoment {
    fn split<'a>(&self, x: &'a [f64]) -> (f64, &'a [f64], &'a [f64]) {
        (x[0], &x[1..1 + self.d], &x[1 + self.d..1 + self.d + self.k])
    }
}

impl MomentFunction for LinearIvMoment {
    fn dims(&self) -> Dims {
        Dims {
            d: self.d,
            k: self.k,
            q: 1 + self.d + self.k,
        }
    }

    fn phi(&self, theta: &DVector<f64>, x: &[f64]) -> DVector<f64> {
        let (y, w, z) = self.split(x);
        let resid = y - w.iter().zip(theta.iter()).map(|(a, b)| a * b).sum::<f64>();
        DVector::from_iterator(self.k, z.iter().map(|zi| zi * resid))
    }

    fn grad_phi(&self, _: &DVector<f64>, x: &[f64]) -> Option<DMatrix<f64>> {
        let (_, w, z) = self.split(x);
        Some(DMatrix::from_fn(self.d, self.k, |i, j| -w[i] * z[j]))
    }

    fn hess_phi(&self, _: &DVector<f64>, _: &[f64]) -> Option<Hessian> {
        Some(vec![DMatrix::zeros(self.d, self.d); self.k])
    }

    fn has_analytic_derivatives(&self) -> bool {
        true
    }
}

/// Builds one of the named models.
pub fn builtin_model(name: &str, params: &ModelParams) -> Result<MomentModel> {
    let which: ModelName = name.parse()?;
    let func: Arc<dyn MomentFunction> = match which {
        ModelName::Mean => Arc::new(MeanMoment),
        ModelName::MeanVariance => {
            let sigma2 = params.sigma2.ok_or_else(|| {
                GelError::Config("model mean-variance requires 'sigma2'".into())
            })?;
            if !(sigma2.is_finite() && sigma2 > 0.0) {
                return Err(GelError::Config(format!(
                    "sigma2 must be positive and finite, got {sigma2}"
                )));
            }
            Arc::new(MeanVarianceMoment { sigma2 })
        }
        ModelName::LinearIv => {
            let d = params.d.unwrap_or(1);
            let k = params
                .k
                .ok_or_else(|| GelError::Config("model linear-iv requires 'k'".into()))?;
            if d == 0 || k < d {
                return Err(GelError::Config(format!(
                    "linear-iv needs 1 <= d <= k, got d = {d}, k = {k}"
                )));
            }
            Arc::new(LinearIvMoment { d, k })
        }
    };
    let d = func.dims().d;
    let theta_box = match (&params.theta_lower, &params.theta_upper) {
        (None, None) => ThetaBox::symmetric(d, DEFAULT_BOX_HALF_WIDTH)?,
        (Some(lo), Some(hi)) => ThetaBox::new(lo.clone(), hi.clone())?,
        _ => {
            return Err(GelError::Config(
                "theta_lower and theta_upper must be given together".into(),
            ))
        }
    };
    MomentModel::new(which.as_str(), func, theta_box)
}

// ---------------------------------------------------------------------------
// empirical moments and diagnostics

/// Empirical analogues (P_n[Φ], P_n[∇Φ], P_n[ΦΦᵗ]) at a fixed θ.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub mean_phi: DVector<f64>,
    pub mean_grad: DMatrix<f64>,
    pub outer: DMatrix<f64>,
}

pub fn sample_moments(
    model: &MomentModel,
    sample: &Sample,
    theta: &DVector<f64>,
) -> Result<SampleMoments> {
    let Dims { d, k, .. } = model.dims();
    let mut mean_phi = DVector::zeros(k);
    let mut mean_grad = DMatrix::zeros(d, k);
    let mut outer = DMatrix::zeros(k, k);
    for (i, x) in sample.rows().enumerate() {
        let phi = model.phi(theta, x);
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(GelError::Evaluation {
                row: i,
                message: format!("non-finite moment value {:?}", phi.as_slice()),
            });
        }
        let grad = model.grad_phi(theta, x);
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(GelError::Evaluation {
                row: i,
                message: "non-finite moment gradient".into(),
            });
        }
        mean_phi += &phi;
        mean_grad += &grad;
        outer.ger(1.0, &phi, &phi, 1.0);
    }
    let n = sample.n() as f64;
    Ok(SampleMoments {
        mean_phi: mean_phi / n,
        mean_grad: mean_grad / n,
        outer: outer / n,
    })
}

/// Relative rank tolerance for D and V.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub theta: Vec<f64>,
    pub d_singular_values: Vec<f64>,
    pub v_eigenvalues: Vec<f64>,
    pub d_full_rank: bool,
    pub v_full_rank: bool,
    pub order_condition: bool,
    pub theta_interior: bool,
    pub fd_fallback: bool,
    /// Sample fourth moments of the sup-norms of Φ, ∇Φ, Ψ over a θ-grid.
    /// A finite-sample proxy for the dominating-function conditions, which
    /// are not checkable from data.
    pub envelope_fourth_moments: [f64; 3],
    pub envelope_proxy_finite: bool,
    pub passed: bool,
    pub messages: Vec<String>,
}

fn rank_ok(values: &[f64]) -> bool {
    let largest = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    largest > 0.0 && values.iter().all(|v| *v > RANK_TOL * largest)
}

/// Rank, order and interiority diagnostics at `theta`. Never fails.
pub fn validate_assumptions(
    model: &MomentModel,
    sample: &Sample,
    theta: &DVector<f64>,
) -> AssumptionReport {
    let Dims { d, k, .. } = model.dims();
    let mut messages = Vec::new();
    let order_condition = k >= d;
    if !order_condition {
        messages.push(format!("order condition fails: k = {k} < d = {d}"));
    }
    let theta_interior = model.theta_box().contains_interior(theta);
    if !theta_interior {
        messages.push("theta is not in the interior of the parameter box".into());
    }
    let fd_fallback = model.uses_fd_fallback();
    if fd_fallback {
        messages.push("derivatives use finite-difference fallback".into());
    }

    let (d_sv, v_eig) = match sample_moments(model, sample, theta) {
        Ok(m) => {
            let mut sv: Vec<f64> = m.mean_grad.clone().svd(false, false).singular_values.iter().copied().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            let mut ev: Vec<f64> = m.outer.clone().symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            (sv, ev)
        }
        Err(e) => {
            messages.push(e.to_string());
            (vec![], vec![])
        }
    };
    let d_full_rank = d_sv.len() == d && rank_ok(&d_sv);
    if !d_full_rank {
        messages.push(format!("empirical D is rank deficient: singular values {d_sv:?}"));
    }
    let v_full_rank = v_eig.len() == k && rank_ok(&v_eig);
    if !v_full_rank {
        messages.push(format!(
            "empirical V is singular or collinear: eigenvalues {v_eig:?}"
        ));
    }

    let envelope_fourth_moments = envelope_proxy(model, sample);
    let envelope_proxy_finite = envelope_fourth_moments.iter().all(|v| v.is_finite());
    if !envelope_proxy_finite {
        messages.push("envelope proxy: non-finite fourth moment".into());
    }

    AssumptionReport {
        theta: theta.iter().copied().collect(),
        d_singular_values: d_sv,
        v_eigenvalues: v_eig,
        d_full_rank,
        v_full_rank,
        order_condition,
        theta_interior,
        fd_fallback,
        envelope_fourth_moments,
        envelope_proxy_finite,
        passed: order_condition && theta_interior && d_full_rank && v_full_rank,
        messages,
    }
}

fn envelope_proxy(model: &MomentModel, sample: &Sample) -> [f64; 3] {
    let d = model.dims().d;
    let per_dim = match d {
        1 => 9,
        2 => 5,
        _ => 3,
    };
    let grid = model.theta_box().grid(per_dim);
    let mut acc = [0.0; 3];
    for x in sample.rows() {
        let mut sup = [0.0f64; 3];
        for theta in &grid {
            sup[0] = sup[0].max(model.phi(theta, x).norm());
            sup[1] = sup[1].max(model.grad_phi(theta, x).norm());
            let h: f64 = model
                .hess_phi(theta, x)
                .iter()
                .map(|m| m.norm_squared())
                .sum();
            sup[2] = sup[2].max(h.sqrt());
        }
        for (a, s) in acc.iter_mut().zip(sup) {
            *a += s.powi(4);
        }
    }
    acc.map(|a| a / sample.n() as f64)
}
