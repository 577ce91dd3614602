//! Estimation with approximate constraint functions Φ_m and experiments on
//! the rate at which θ̂_m approaches θ̂.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GelError, Result};
use crate::estimator::{estimate, EstimateReport};
use crate::harness::{csv_err, generate, median, unit_stream, with_workers, DataGenerator, MAX_EXCLUDED_FRACTION, RNG_FAMILY};
use crate::kernel::DivergenceKernel;
use crate::model::{Dims, Hessian, MomentFunction, MomentModel};
use crate::sample::Sample;
use crate::solver::{outer_minimize, SolverOptions};

/// Index m of the approximating sequence; `Infinite` is the exact Φ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MIndex {
    Finite(u64),
    Infinite,
}

impl fmt::Display for MIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MIndex::Finite(m) => write!(f, "{m}"),
            MIndex::Infinite => f.write_str("inf"),
        }
    }
}

/// Additive correction (m, θ, x) ↦ Φ_m(θ, x) − Φ(θ, x).
///
/// Derivatives default to `None`, in which case the approximate model falls
/// back to finite differences.
pub trait Perturbation: Send + Sync {
    fn value(&self, m: u64, theta: &DVector<f64>, x: &[f64]) -> DVector<f64>;

    fn grad(&self, _m: u64, _theta: &DVector<f64>, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn hess(&self, _m: u64, _theta: &DVector<f64>, _x: &[f64]) -> Option<Hessian> {
        None
    }
}

/// Built-in perturbations, all constant in θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PerturbationSpec {
    /// (c/m)·direction
    Shift { c: f64, direction: Vec<f64> },
    /// (c/m)·sin(m·x₀)·direction
    Oscillation { c: f64, direction: Vec<f64> },
}

impl PerturbationSpec {
    fn parts(&self) -> (f64, &[f64]) {
        match self {
            PerturbationSpec::Shift { c, direction } | PerturbationSpec::Oscillation { c, direction } => {
                (*c, direction)
            }
        }
    }
}

struct ThetaFree {
    spec: PerturbationSpec,
    d: usize,
}

impl Perturbation for ThetaFree {
    fn value(&self, m: u64, _: &DVector<f64>, x: &[f64]) -> DVector<f64> {
        let (c, dir) = self.spec.parts();
        let m = m as f64;
        let scale = match self.spec {
            PerturbationSpec::Shift { .. } => c / m,
            PerturbationSpec::Oscillation { .. } => c / m * (m * x[0]).sin(),
        };
        DVector::from_iterator(dir.len(), dir.iter().map(|v| scale * v))
    }

    fn grad(&self, _: u64, _: &DVector<f64>, _: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(self.d, self.spec.parts().1.len()))
    }

    fn hess(&self, _: u64, _: &DVector<f64>, _: &[f64]) -> Option<Hessian> {
        Some(vec![DMatrix::zeros(self.d, self.d); self.spec.parts().1.len()])
    }
}

/// Advertised rate φ_m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Rate {
    /// φ_m = m^exponent
    Power { exponent: f64 },
}

impl Rate {
    pub fn phi(&self, m: u64) -> f64 {
        match self {
            Rate::Power { exponent } => (m as f64).powf(*exponent),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Rate::Power { exponent } if exponent.is_finite() && *exponent > 0.0 => Ok(()),
            Rate::Power { exponent } => Err(GelError::Config(format!(
                "rate exponent must be positive, got {exponent}"
            ))),
        }
    }
}

/// The exact model together with a perturbation sequence and its rate.
#[derive(Clone)]
pub struct ApproxFamily {
    pub base: MomentModel,
    pub perturbation: Arc<dyn Perturbation>,
    pub rate: Rate,
    /// Observations at which sup-norm checks are evaluated.
    pub probes: Vec<Vec<f64>>,
}

impl fmt::Debug for ApproxFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ApproxFamily")
            .field("base", &self.base)
            .field("rate", &self.rate)
            .field("probes", &self.probes.len())
            .finish()
    }
}

impl ApproxFamily {
    /// Probes default to x = t·(1, …, 1) for t ∈ {−2, −1, 0, 1, 2}.
    pub fn new(base: MomentModel, perturbation: Arc<dyn Perturbation>, rate: Rate) -> Result<Self> {
        rate.validate()?;
        let q = base.dims().q;
        let probes = (-2..=2).map(|t| vec![t as f64; q]).collect();
        Ok(ApproxFamily {
            base,
            perturbation,
            rate,
            probes,
        })
    }

    pub fn from_spec(base: MomentModel, spec: &PerturbationSpec, rate: Rate) -> Result<Self> {
        let Dims { d, k, .. } = base.dims();
        let (c, dir) = spec.parts();
        if dir.len() != k {
            return Err(GelError::Config(format!(
                "perturbation direction has {} entries but the model has {k} moments",
                dir.len()
            )));
        }
        if !c.is_finite() || dir.iter().any(|v| !v.is_finite()) {
            return Err(GelError::Config("perturbation must be finite".into()));
        }
        Self::new(base, Arc::new(ThetaFree { spec: spec.clone(), d }), rate)
    }

    pub fn with_probes(mut self, probes: Vec<Vec<f64>>) -> Result<Self> {
        let q = self.base.dims().q;
        if probes.is_empty() || probes.iter().any(|p| p.len() != q) {
            return Err(GelError::Config(format!("probes must be nonempty rows of length {q}")));
        }
        self.probes = probes;
        Ok(self)
    }

    /// Parameter values used by the sup-norm checks: 3 per box dimension.
    fn probe_thetas(&self) -> Vec<DVector<f64>> {
        self.base.theta_box().grid(3)
    }
}

struct Approximated {
    base: Arc<dyn MomentFunction>,
    perturbation: Arc<dyn Perturbation>,
    m: u64,
    analytic: bool,
}

impl MomentFunction for Approximated {
    fn dims(&self) -> Dims {
        self.base.dims()
    }

    fn phi(&self, theta: &DVector<f64>, x: &[f64]) -> DVector<f64> {
        self.base.phi(theta, x) + self.perturbation.value(self.m, theta, x)
    }

    fn grad_phi(&self, theta: &DVector<f64>, x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.base.grad_phi(theta, x)? + self.perturbation.grad(self.m, theta, x)?)
    }

    fn hess_phi(&self, theta: &DVector<f64>, x: &[f64]) -> Option<Hessian> {
        let base = self.base.hess_phi(theta, x)?;
        let delta = self.perturbation.hess(self.m, theta, x)?;
        Some(base.into_iter().zip(delta).map(|(a, b)| a + b).collect())
    }

    fn has_analytic_derivatives(&self) -> bool {
        self.analytic
    }
}

/// Relative agreement required between supplied and numerical derivatives.
const SMOOTHNESS_TOL: f64 = 1e-4;

/// Φ_m as a model. `Infinite` returns the base model itself, so estimates
/// coincide bitwise with the exact ones.
pub fn approx_model(family: &ApproxFamily, m: MIndex) -> Result<MomentModel> {
    let m = match m {
        MIndex::Infinite => return Ok(family.base.clone()),
        MIndex::Finite(0) => return Err(GelError::Config("approximation index m must be >= 1".into())),
        MIndex::Finite(m) => m,
    };
    let base = family.base.function().clone();
    let thetas = family.probe_thetas();
    let x0 = &family.probes[0];
    let analytic = base.has_analytic_derivatives()
        && family.perturbation.grad(m, &thetas[0], x0).is_some()
        && family.perturbation.hess(m, &thetas[0], x0).is_some();
    let model = MomentModel::new(
        format!("{}~m={m}", family.base.name()),
        Arc::new(Approximated {
            base,
            perturbation: family.perturbation.clone(),
            m,
            analytic,
        }),
        family.base.theta_box().clone(),
    )?;

    // the same derivative-consistency check applied to any model
    let numeric = MomentModel::new(
        "numeric",
        Arc::new(NumericOnly(model.function().clone())),
        family.base.theta_box().clone(),
    )?;
    for theta in &thetas {
        for x in &family.probes {
            let phi = model.phi(theta, x);
            if phi.iter().any(|v| !v.is_finite()) {
                return Err(GelError::Config(format!(
                    "approximate moment is not finite at m = {m}, theta = {:?}",
                    theta.as_slice()
                )));
            }
            if !model.uses_fd_fallback() {
                let g = model.grad_phi(theta, x);
                let g_fd = numeric.grad_phi(theta, x);
                let scale = 1.0 + g.amax().max(g_fd.amax());
                if (&g - &g_fd).amax() > SMOOTHNESS_TOL * scale {
                    return Err(GelError::Config(format!(
                        "approximate moment at m = {m} fails the derivative check at theta = {:?}",
                        theta.as_slice()
                    )));
                }
            }
        }
    }
    Ok(model)
}

struct NumericOnly(Arc<dyn MomentFunction>);

impl MomentFunction for NumericOnly {
    fn dims(&self) -> Dims {
        self.0.dims()
    }

    fn phi(&self, theta: &DVector<f64>, x: &[f64]) -> DVector<f64> {
        self.0.phi(theta, x)
    }
}

/// Sup over the probe grid of the Φ, ∇Φ and Ψ discrepancies at one m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupNorms {
    pub m: u64,
    pub phi_m: f64,
    pub value: f64,
    pub gradient: f64,
    pub hessian: f64,
}

impl SupNorms {
    pub fn max(&self) -> f64 {
        self.value.max(self.gradient).max(self.hessian)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateConstant {
    pub norms: Vec<SupNorms>,
    /// C = max over m of φ_m · sup‖Φ_m − Φ‖ (and derivative analogues)
    pub c: f64,
}

/// Fits the smallest C with sup-norm discrepancy ≤ C/φ_m over `ms`.
pub fn rate_constant(family: &ApproxFamily, ms: &[u64]) -> Result<RateConstant> {
    let thetas = family.probe_thetas();
    let mut norms = Vec::with_capacity(ms.len());
    for &m in ms {
        let model = approx_model(family, MIndex::Finite(m))?;
        let mut s = SupNorms {
            m,
            phi_m: family.rate.phi(m),
            value: 0.0,
            gradient: 0.0,
            hessian: 0.0,
        };
        for theta in &thetas {
            for x in &family.probes {
                let b = &family.base;
                s.value = s.value.max((model.phi(theta, x) - b.phi(theta, x)).norm());
                s.gradient = s.gradient.max((model.grad_phi(theta, x) - b.grad_phi(theta, x)).norm());
                let h = model
                    .hess_phi(theta, x)
                    .into_iter()
                    .zip(b.hess_phi(theta, x))
                    .map(|(a, c)| (a - c).norm_squared())
                    .sum::<f64>()
                    .sqrt();
                s.hessian = s.hessian.max(h);
            }
        }
        norms.push(s);
    }
    let c = norms.iter().map(|s| s.phi_m * s.max()).fold(0.0, f64::max);
    Ok(RateConstant { norms, c })
}

/// Warning attached when Λ″ is not known to be bounded.
pub fn curvature_warning(kernel: &DivergenceKernel) -> Option<String> {
    if kernel.lambda2_bound().is_some() {
        return None;
    }
    Some(format!(
        "kernel {} does not satisfy the boundedness condition on the criterion's second derivative (Lambda'' <= K < inf); the approximation rate guarantee does not apply",
        kernel.name()
    ))
}

/// θ̂_m: the estimate computed with Φ_m in place of Φ.
pub fn estimate_approx(
    family: &ApproxFamily,
    m: MIndex,
    sample: &Sample,
    kernel: &DivergenceKernel,
    opts: &SolverOptions,
) -> Result<EstimateReport> {
    let warning = curvature_warning(kernel);
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let model = approx_model(family, m)?;
    let mut report = estimate(&model, sample, kernel, opts)?;
    report.warnings.extend(warning);
    Ok(report)
}

// ---------------------------------------------------------------------------
// rate experiment

/// Rule m(n) used to test the equivalence regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Schedule {
    /// m = n
    Linear,
    /// m = ⌈√n⌉
    SqrtCeil,
    /// m = ⌈n^exponent⌉
    Power { exponent: f64 },
    Fixed { m: u64 },
}

impl Schedule {
    pub fn m_for(&self, n: usize) -> u64 {
        match self {
            Schedule::Linear => n as u64,
            Schedule::SqrtCeil => (n as f64).sqrt().ceil() as u64,
            Schedule::Power { exponent } => (n as f64).powf(*exponent).ceil().max(1.0) as u64,
            Schedule::Fixed { m } => *m,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Schedule::Linear => "m=n".into(),
            Schedule::SqrtCeil => "m=ceil(sqrt(n))".into(),
            Schedule::Power { exponent } => format!("m=ceil(n^{exponent})"),
            Schedule::Fixed { m } => format!("m={m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateDesign {
    /// Sample sizes for the (n, m) grid; the slope is fitted at the largest.
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<u64>,
    #[serde(default)]
    pub schedules: Vec<Schedule>,
    /// Sample sizes at which schedules are evaluated; defaults to `n_grid`.
    #[serde(default)]
    pub schedule_n: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    /// Run even when the kernel's Λ″ is unbounded.
    #[serde(default)]
    pub allow_unbounded_curvature: bool,
}

impl RateDesign {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(GelError::Config("replications must be positive".into()));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) || self.schedule_n.contains(&0) {
            return Err(GelError::Config("sample sizes must be positive".into()));
        }
        if self.m_grid.contains(&0) {
            return Err(GelError::Config("m_grid entries must be >= 1".into()));
        }
        for s in &self.schedules {
            if let Schedule::Power { exponent } = s {
                if !(exponent.is_finite() && *exponent > 0.0) {
                    return Err(GelError::Config("schedule exponent must be positive".into()));
                }
            }
            if matches!(s, Schedule::Fixed { m: 0 }) {
                return Err(GelError::Config("fixed schedule needs m >= 1".into()));
            }
        }
        Ok(())
    }

    fn schedule_sizes(&self) -> &[usize] {
        if self.schedule_n.is_empty() {
            &self.n_grid
        } else {
            &self.schedule_n
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRow {
    pub replication: usize,
    pub n: usize,
    pub m: u64,
    pub phi_m: f64,
    /// ‖θ̂_m − θ̂‖
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub m: u64,
    pub phi_m: f64,
    pub count: usize,
    pub median_discrepancy: f64,
    /// median of n‖θ̂_m − θ̂‖²
    pub median_scaled_sq: f64,
    /// median of √n‖θ̂_m − θ̂‖
    pub median_root_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub schedule: Schedule,
    pub label: String,
    /// (n, m(n), n·φ_m⁻², median √n‖θ̂_m − θ̂‖)
    pub points: Vec<(usize, u64, f64, f64)>,
    pub strictly_decreasing: bool,
    /// last over first median
    pub ratio: f64,
}

/// Per-n least squares of median n‖θ̂_m − θ̂‖² on n·φ_m⁻².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichFit {
    pub n: usize,
    pub intercept: f64,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub model: String,
    pub kernel: String,
    pub generator: DataGenerator,
    pub rate: Rate,
    pub design: RateDesign,
    pub rng: String,
    pub cells: Vec<CellSummary>,
    /// Fitted log-log slope of median ‖θ̂_m − θ̂‖ on φ_m at the largest n.
    pub slope: f64,
    /// The same fit against m itself, a data-driven check on the rate.
    pub slope_in_m: f64,
    pub slope_n: usize,
    pub equivalence: Vec<ScheduleResult>,
    pub sandwich: Vec<SandwichFit>,
    pub excluded: usize,
    pub total: usize,
    pub exclusions: Vec<String>,
    pub warnings: Vec<String>,
    pub rows: Vec<DiscrepancyRow>,
}

impl RobustnessReport {
    pub fn cell(&self, n: usize, m: u64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.n == n && c.m == m)
    }

    /// Rows of (replication, n, m, φ_m, discrepancy).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replication", "n", "m", "phi_m", "discrepancy"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.replication.to_string(),
                r.n.to_string(),
                r.m.to_string(),
                format!("{:e}", r.phi_m),
                format!("{:e}", r.discrepancy),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ordinary least squares slope and intercept of y on x.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

const RATE_TAG: u8 = 2;

/// For each replication and (n, m) cell: draw data, compute θ̂ and θ̂_m and
/// record ‖θ̂_m − θ̂‖. A replication at a given n whose fits fail is
/// excluded as a whole; more than 20% exclusions aborts.
#[allow(clippy::too_many_arguments)]
pub fn rate_experiment(
    family: &ApproxFamily,
    gen: &DataGenerator,
    kernel: &DivergenceKernel,
    design: &RateDesign,
    opts: &SolverOptions,
    workers: usize,
) -> Result<RobustnessReport> {
    design.validate()?;
    opts.validate()?;
    let mut warnings = Vec::new();
    if let Some(w) = curvature_warning(kernel) {
        log::warn!("{w}");
        if !design.allow_unbounded_curvature {
            return Err(GelError::Config(format!(
                "{w}; set allow_unbounded_curvature = true to run anyway"
            )));
        }
        warnings.push(w);
    }
    if gen.q() != family.base.dims().q {
        return Err(GelError::Config(format!(
            "generator rows have {} columns but model '{}' expects {}",
            gen.q(),
            family.base.name(),
            family.base.dims().q
        )));
    }

    // (n, m) cells: the full grid plus each schedule's m(n)
    let mut cells: BTreeSet<(usize, u64)> = BTreeSet::new();
    for &n in &design.n_grid {
        cells.extend(design.m_grid.iter().map(|&m| (n, m)));
    }
    for s in &design.schedules {
        cells.extend(design.schedule_sizes().iter().map(|&n| (n, s.m_for(n))));
    }
    let ms: BTreeSet<u64> = cells.iter().map(|c| c.1).collect();
    let models: Vec<(u64, MomentModel)> = ms
        .iter()
        .map(|&m| Ok((m, approx_model(family, MIndex::Finite(m))?)))
        .collect::<Result<_>>()?;
    let model_for = |m: u64| &models.iter().find(|(mm, _)| *mm == m).expect("built").1;
    let sizes: BTreeSet<usize> = cells.iter().map(|c| c.0).collect();

    let units: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&n| (0..design.replications).map(move |r| (n, r)))
        .collect();
    let outcomes: Vec<std::result::Result<Vec<DiscrepancyRow>, String>> = with_workers(workers, || {
        units
            .par_iter()
            .map(|&(n, r)| {
                let run = || -> Result<Vec<DiscrepancyRow>> {
                    let sample = generate(gen, n, design.seed, unit_stream(RATE_TAG, r, n))?;
                    let exact = DVector::from_vec(
                        outer_minimize(&family.base, &sample, kernel, opts)?.theta_hat,
                    );
                    cells
                        .range((n, 0)..=(n, u64::MAX))
                        .map(|&(_, m)| {
                            let approx = outer_minimize(model_for(m), &sample, kernel, opts)?;
                            let diff = DVector::from_vec(approx.theta_hat) - &exact;
                            Ok(DiscrepancyRow {
                                replication: r,
                                n,
                                m,
                                phi_m: family.rate.phi(m),
                                discrepancy: diff.norm(),
                            })
                        })
                        .collect()
                };
                run().map_err(|e| format!("replication {r}, n = {n}: {e}"))
            })
            .collect()
    })?;

    let total = outcomes.len();
    let exclusions: Vec<String> = outcomes.iter().filter_map(|o| o.as_ref().err().cloned()).collect();
    let excluded = exclusions.len();
    if excluded as f64 > MAX_EXCLUDED_FRACTION * total as f64 {
        return Err(GelError::TooManyExclusions { excluded, total });
    }
    for e in &exclusions {
        log::warn!("excluded {e}");
    }
    let rows: Vec<DiscrepancyRow> = outcomes.into_iter().filter_map(|o| o.ok()).flatten().collect();
    if let Some(bad) = rows.iter().find(|r| !(r.discrepancy.is_finite() && r.discrepancy >= 0.0)) {
        return Err(GelError::Consistency(format!(
            "non-finite discrepancy at n = {}, m = {}",
            bad.n, bad.m
        )));
    }

    let summaries: Vec<CellSummary> = cells
        .iter()
        .map(|&(n, m)| {
            let mut disc: Vec<f64> = rows
                .iter()
                .filter(|r| r.n == n && r.m == m)
                .map(|r| r.discrepancy)
                .collect();
            let nf = n as f64;
            let med = median(&mut disc);
            // monotone transforms commute with the median
            CellSummary {
                n,
                m,
                phi_m: family.rate.phi(m),
                count: disc.len(),
                median_discrepancy: med,
                median_scaled_sq: nf * med * med,
                median_root_n: nf.sqrt() * med,
            }
        })
        .collect();
    let find = |n: usize, m: u64| summaries.iter().find(|c| c.n == n && c.m == m).expect("cell");

    let slope_n = *design.n_grid.iter().max().expect("nonempty");
    let (slope, slope_in_m) = if design.m_grid.len() >= 2 {
        let ms: Vec<u64> = design.m_grid.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let ly: Vec<f64> = ms.iter().map(|&m| find(slope_n, m).median_discrepancy.ln()).collect();
        let lphi: Vec<f64> = ms.iter().map(|&m| family.rate.phi(m).ln()).collect();
        let lm: Vec<f64> = ms.iter().map(|&m| (m as f64).ln()).collect();
        (ols(&lphi, &ly).0, ols(&lm, &ly).0)
    } else {
        (f64::NAN, f64::NAN)
    };

    let equivalence = design
        .schedules
        .iter()
        .map(|s| {
            let mut sizes = design.schedule_sizes().to_vec();
            sizes.sort_unstable();
            sizes.dedup();
            let points: Vec<(usize, u64, f64, f64)> = sizes
                .iter()
                .map(|&n| {
                    let m = s.m_for(n);
                    let phi = family.rate.phi(m);
                    (n, m, n as f64 / (phi * phi), find(n, m).median_root_n)
                })
                .collect();
            let strictly_decreasing = points.windows(2).all(|w| w[1].3 < w[0].3);
            let ratio = points.last().expect("nonempty").3 / points[0].3;
            ScheduleResult {
                schedule: *s,
                label: s.label(),
                points,
                strictly_decreasing,
                ratio,
            }
        })
        .collect();

    let sandwich = design
        .n_grid
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|_| design.m_grid.len() >= 2)
        .map(|n| {
            let pts: Vec<&CellSummary> = summaries.iter().filter(|c| c.n == n).collect();
            let x: Vec<f64> = pts.iter().map(|c| n as f64 / (c.phi_m * c.phi_m)).collect();
            let y: Vec<f64> = pts.iter().map(|c| c.median_scaled_sq).collect();
            let (coefficient, intercept) = ols(&x, &y);
            SandwichFit {
                n,
                intercept,
                coefficient,
            }
        })
        .collect();

    Ok(RobustnessReport {
        model: family.base.name().to_owned(),
        kernel: kernel.name().to_owned(),
        generator: gen.clone(),
        rate: family.rate,
        design: design.clone(),
        rng: RNG_FAMILY.into(),
        cells: summaries,
        slope,
        slope_in_m,
        slope_n,
        equivalence,
        sandwich,
        excluded,
        total,
        exclusions,
        warnings,
        rows,
    })
}
