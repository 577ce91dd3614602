//! Monte Carlo engine: data-generating processes with known θ₀, D and V,
//! and replicated estimation studies.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GelError, Result};
use crate::estimator::{efficient_covariance, mem_weights, standard_errors};
use crate::kernel::DivergenceKernel;
use crate::model::{MomentModel, ModelName};
use crate::sample::Sample;
use crate::solver::{outer_minimize, SolverOptions, StopReason};

/// Name of the random number generator family; echoed into reports.
pub const RNG_FAMILY: &str = "chacha20 (rand_chacha), seed_from_u64 + per-unit stream";

/// Replications excluded beyond this fraction abort an experiment.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.2;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Known data-generating process μ₀.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataGenerator {
    /// X ~ N(mean, variance); θ₀ = mean for the mean and mean-variance models.
    Normal { mean: f64, variance: f64 },
    /// y = wᵗθ₀ + u, w = πᵗz + e, z ~ N(0, Σ_z), corr(u, e₁) = rho.
    /// Rows are laid out as (y, w₁..w_d, z₁..z_k).
    LinearIv {
        theta0: Vec<f64>,
        /// k×d first-stage coefficients, one row per instrument.
        pi: Vec<Vec<f64>>,
        /// k×k instrument covariance.
        z_cov: Vec<Vec<f64>>,
        sigma_u: f64,
        sigma_e: f64,
        rho: f64,
    },
}

/// Population matrices D₀ = E[∇Φ(θ₀, X)] (d×k) and V₀ = E[ΦΦᵗ] (k×k).
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub theta0: DVector<f64>,
    pub d0: DMatrix<f64>,
    pub v0: DMatrix<f64>,
}

impl Population {
    /// (D₀ V₀⁻¹ D₀ᵗ)⁻¹
    pub fn efficient_covariance(&self) -> Result<DMatrix<f64>> {
        efficient_covariance(&self.d0, &self.v0)
    }
}

fn matrix(rows: &[Vec<f64>], name: &str, r: usize, c: usize) -> Result<DMatrix<f64>> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(GelError::Config(format!("{name} must be {r}x{c}")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl DataGenerator {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(GelError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            DataGenerator::Normal { mean, variance } => {
                if !mean.is_finite() {
                    return Err(GelError::Config("mean must be finite".into()));
                }
                positive("variance", *variance)
            }
            DataGenerator::LinearIv {
                theta0,
                pi,
                z_cov,
                sigma_u,
                sigma_e,
                rho,
            } => {
                positive("sigma_u", *sigma_u)?;
                positive("sigma_e", *sigma_e)?;
                if !(rho.abs() < 1.0) {
                    return Err(GelError::Config(format!(
                        "|rho| must be below 1, got {rho}"
                    )));
                }
                let d = theta0.len();
                let k = pi.len();
                if d == 0 || k < d {
                    return Err(GelError::Config(format!(
                        "linear-iv generator needs 1 <= d <= k, got d = {d}, k = {k}"
                    )));
                }
                matrix(pi, "pi", k, d)?;
                let s = matrix(z_cov, "z_cov", k, k)?;
                if (&s - s.transpose()).amax() > 1e-12 || s.cholesky().is_none() {
                    return Err(GelError::Config(
                        "z_cov must be symmetric positive definite".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Observation dimension of generated rows.
    pub fn q(&self) -> usize {
        match self {
            DataGenerator::Normal { .. } => 1,
            DataGenerator::LinearIv { theta0, pi, .. } => 1 + theta0.len() + pi.len(),
        }
    }

    pub fn theta0(&self) -> Vec<f64> {
        match self {
            DataGenerator::Normal { mean, .. } => vec![*mean],
            DataGenerator::LinearIv { theta0, .. } => theta0.clone(),
        }
    }

    /// Closed-form D₀ and V₀ for a built-in model paired with this process.
    pub fn population(&self, model: &MomentModel) -> Result<Population> {
        self.validate()?;
        let which: ModelName = model.name().parse().map_err(|_| {
            GelError::Config(format!(
                "no closed-form population matrices for model '{}'",
                model.name()
            ))
        })?;
        let mismatch = || {
            GelError::Config(format!(
                "generator does not match model '{}'",
                model.name()
            ))
        };
        match (self, which) {
            (DataGenerator::Normal { mean, variance }, ModelName::Mean) => Ok(Population {
                theta0: DVector::from_element(1, *mean),
                d0: DMatrix::from_element(1, 1, -1.0),
                v0: DMatrix::from_element(1, 1, *variance),
            }),
            (DataGenerator::Normal { mean, variance }, ModelName::MeanVariance) => {
                // the model's σ₀² must equal the process variance for θ₀ to be identified
                let theta0 = DVector::from_element(1, *mean);
                let sd = variance.sqrt();
                let centred = 0.5
                    * (model.phi(&theta0, &[mean + sd])[1] + model.phi(&theta0, &[mean - sd])[1]);
                if centred.abs() > 1e-9 * (1.0 + variance) {
                    return Err(mismatch());
                }
                let (t, s2) = (*mean, *variance);
                Ok(Population {
                    theta0,
                    d0: DMatrix::from_row_slice(1, 2, &[-1.0, -2.0 * t]),
                    v0: DMatrix::from_row_slice(
                        2,
                        2,
                        &[s2, 2.0 * t * s2, 2.0 * t * s2, 2.0 * s2 * s2 + 4.0 * t * t * s2],
                    ),
                })
            }
            (
                DataGenerator::LinearIv {
                    theta0,
                    pi,
                    z_cov,
                    sigma_u,
                    ..
                },
                ModelName::LinearIv,
            ) => {
                let (d, k) = (theta0.len(), pi.len());
                let dims = model.dims();
                if dims.d != d || dims.k != k {
                    return Err(mismatch());
                }
                let pi = matrix(pi, "pi", k, d)?;
                let s = matrix(z_cov, "z_cov", k, k)?;
                Ok(Population {
                    theta0: DVector::from_column_slice(theta0),
                    d0: -(pi.transpose() * &s),
                    v0: s * (sigma_u * sigma_u),
                })
            }
            _ => Err(mismatch()),
        }
    }
}

/// Generator for `stream` under `seed`. Distinct streams are independent,
/// which lets replications run in any order or on any thread.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for one work unit of an experiment: 8 bits of tag, 32 bits of
/// replication index, 24 bits of sample size.
pub fn unit_stream(tag: u8, replication: usize, n: usize) -> u64 {
    ((tag as u64) << 56) | ((replication as u64 & 0xFFFF_FFFF) << 24) | (n as u64 & 0xFF_FFFF)
}

/// n i.i.d. rows from the process, deterministic in (gen, n, seed, stream).
pub fn generate(gen: &DataGenerator, n: usize, seed: u64, stream: u64) -> Result<Sample> {
    if n == 0 {
        return Err(GelError::Config("sample size must be at least 1".into()));
    }
    gen.validate()?;
    let mut rng = stream_rng(seed, stream);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    match gen {
        DataGenerator::Normal { mean, variance } => {
            let sd = variance.sqrt();
            let xs: Vec<f64> = (0..n).map(|_| mean + sd * normal()).collect();
            Sample::from_column(&xs)
        }
        DataGenerator::LinearIv {
            theta0,
            pi,
            z_cov,
            sigma_u,
            sigma_e,
            rho,
        } => {
            let (d, k) = (theta0.len(), pi.len());
            let l = matrix(z_cov, "z_cov", k, k)?
                .cholesky()
                .expect("validated")
                .l();
            let q = 1 + d + k;
            let mut data = Vec::with_capacity(n * q);
            let root = (1.0 - rho * rho).sqrt();
            for _ in 0..n {
                let eps = DVector::from_fn(k, |_, _| normal());
                let z = &l * eps;
                let xi: Vec<f64> = (0..d).map(|_| normal()).collect();
                let u = sigma_u * (rho * xi[0] + root * normal());
                let w: Vec<f64> = (0..d)
                    .map(|j| (0..k).map(|i| pi[i][j] * z[i]).sum::<f64>() + sigma_e * xi[j])
                    .collect();
                let y = w.iter().zip(theta0).map(|(a, b)| a * b).sum::<f64>() + u;
                data.push(y);
                data.extend(&w);
                data.extend(z.iter());
            }
            Sample::from_flat(data, q)
        }
    }
}

/// Runs `f` on a pool bounded to `workers` threads (0 = all cores).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| GelError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

// ---------------------------------------------------------------------------
// Monte Carlo study

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloDesign {
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
}

impl MonteCarloDesign {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(GelError::Config("replications must be positive".into()));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(GelError::Config(
                "n_grid must list positive sample sizes".into(),
            ));
        }
        Ok(())
    }
}

/// One estimate within a replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub n: usize,
    pub kernel: String,
    pub theta_hat: Option<Vec<f64>>,
    pub std_errors: Option<Vec<f64>>,
    pub converged: bool,
    pub weights_min: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub kernel: String,
    pub n: usize,
    pub used: usize,
    pub excluded: usize,
    pub mean: Vec<f64>,
    pub bias: Vec<f64>,
    pub variance: Vec<f64>,
    pub mse: Vec<f64>,
    /// n·Var(θ̂), the Monte Carlo variance of √n(θ̂ − θ₀).
    pub scaled_variance: Vec<f64>,
    /// diag((D₀V₀⁻¹D₀ᵗ)⁻¹)
    pub efficient_variance: Vec<f64>,
    pub variance_ratio: Vec<f64>,
    /// Fraction of 95% Wald intervals covering θ₀, per coordinate.
    pub coverage: Vec<f64>,
    /// scaled variance ≥ 0.8 × the efficiency bound in every coordinate
    pub above_efficiency_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDiscrepancy {
    pub kernels: (String, String),
    pub n: usize,
    pub pairs: usize,
    /// median over replications of √n‖θ̂⁽¹⁾ − θ̂⁽²⁾‖
    pub median_scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub model: String,
    pub generator: DataGenerator,
    pub design: MonteCarloDesign,
    pub rng: String,
    pub theta0: Vec<f64>,
    pub efficient_covariance: Vec<Vec<f64>>,
    pub summaries: Vec<KernelSummary>,
    pub pairwise: Vec<PairwiseDiscrepancy>,
    pub excluded: usize,
    pub total: usize,
    pub records: Vec<ReplicationRecord>,
}

impl EfficiencyReport {
    pub fn summary(&self, kernel: &str, n: usize) -> Option<&KernelSummary> {
        self.summaries.iter().find(|s| s.kernel == kernel && s.n == n)
    }

    pub fn pairwise_at(&self, a: &str, b: &str, n: usize) -> Option<&PairwiseDiscrepancy> {
        self.pairwise.iter().find(|p| {
            p.n == n
                && ((p.kernels.0 == a && p.kernels.1 == b) || (p.kernels.0 == b && p.kernels.1 == a))
        })
    }

    /// One row per replication and kernel: n, kernel, θ̂, converged, weights-min.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.theta0.len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["replication".to_string(), "n".into(), "kernel".into()];
        header.extend((0..d).map(|j| format!("theta_{j}")));
        header.extend(["converged".into(), "weights_min".into()]);
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![r.replication.to_string(), r.n.to_string(), r.kernel.clone()];
            match &r.theta_hat {
                Some(t) => row.extend(t.iter().map(|v| format!("{v:e}"))),
                None => row.extend((0..d).map(|_| String::new())),
            }
            row.push(r.converged.to_string());
            row.push(r.weights_min.map(|v| format!("{v:e}")).unwrap_or_default());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> GelError {
    GelError::Io(std::io::Error::other(e))
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

const MC_TAG: u8 = 1;

fn fit_one(
    model: &MomentModel,
    sample: &Sample,
    kernel: &DivergenceKernel,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, Vec<f64>, bool, f64)> {
    let sol = outer_minimize(model, sample, kernel, opts)?;
    let weighted = mem_weights(model, sample, kernel, &sol)?;
    let se = standard_errors(model, sample, &sol.theta())?;
    let stop = sol.trace.runs[sol.trace.selected].stop;
    let converged = sol.inner.converged && stop != StopReason::MaxIterations;
    let wmin = weighted.weights.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((sol.theta_hat, se, converged, wmin))
}

/// Replicated estimation over an n-grid with common random numbers across
/// kernels. Failed fits are excluded and counted; more than 20% aborts.
pub fn monte_carlo(
    gen: &DataGenerator,
    model: &MomentModel,
    kernels: &[DivergenceKernel],
    design: &MonteCarloDesign,
    opts: &SolverOptions,
    workers: usize,
) -> Result<EfficiencyReport> {
    design.validate()?;
    opts.validate()?;
    if kernels.is_empty() {
        return Err(GelError::Config("at least one kernel is required".into()));
    }
    if gen.q() != model.dims().q {
        return Err(GelError::Config(format!(
            "generator rows have {} columns but model '{}' expects {}",
            gen.q(),
            model.name(),
            model.dims().q
        )));
    }
    let pop = gen.population(model)?;
    let eff = pop.efficient_covariance()?;
    let d = model.dims().d;

    let units: Vec<(usize, usize)> = design
        .n_grid
        .iter()
        .flat_map(|&n| (0..design.replications).map(move |r| (n, r)))
        .collect();
    let records: Vec<ReplicationRecord> = with_workers(workers, || {
        units
            .par_iter()
            .map(|&(n, r)| {
                let sample = generate(gen, n, design.seed, unit_stream(MC_TAG, r, n));
                kernels
                    .iter()
                    .map(|kernel| {
                        let fit = sample
                            .as_ref()
                            .map_err(|e| GelError::Data(e.to_string()))
                            .and_then(|s| fit_one(model, s, kernel, opts));
                        let mut rec = ReplicationRecord {
                            replication: r,
                            n,
                            kernel: kernel.name().to_owned(),
                            theta_hat: None,
                            std_errors: None,
                            converged: false,
                            weights_min: None,
                            error: None,
                        };
                        match fit {
                            Ok((t, se, conv, wmin)) => {
                                rec.theta_hat = Some(t);
                                rec.std_errors = Some(se);
                                rec.converged = conv;
                                rec.weights_min = Some(wmin);
                            }
                            Err(e) => rec.error = Some(e.to_string()),
                        }
                        rec
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    })?;

    let total = records.len();
    let excluded = records.iter().filter(|r| r.theta_hat.is_none()).count();
    if excluded as f64 > MAX_EXCLUDED_FRACTION * total as f64 {
        return Err(GelError::TooManyExclusions { excluded, total });
    }
    if excluded > 0 {
        log::warn!("{excluded} of {total} fits excluded");
    }

    let theta0 = pop.theta0.as_slice().to_vec();
    let eff_diag: Vec<f64> = eff.diagonal().iter().copied().collect();
    let mut summaries = Vec::new();
    for &n in &design.n_grid {
        for kernel in kernels {
            let fits: Vec<&ReplicationRecord> = records
                .iter()
                .filter(|r| r.n == n && r.kernel == kernel.name())
                .collect();
            let ok: Vec<(&Vec<f64>, &Vec<f64>)> = fits
                .iter()
                .filter_map(|r| Some((r.theta_hat.as_ref()?, r.std_errors.as_ref()?)))
                .collect();
            let used = ok.len() as f64;
            let mut s = KernelSummary {
                kernel: kernel.name().to_owned(),
                n,
                used: ok.len(),
                excluded: fits.len() - ok.len(),
                mean: vec![0.0; d],
                bias: vec![0.0; d],
                variance: vec![0.0; d],
                mse: vec![0.0; d],
                scaled_variance: vec![0.0; d],
                efficient_variance: eff_diag.clone(),
                variance_ratio: vec![0.0; d],
                coverage: vec![0.0; d],
                above_efficiency_floor: true,
            };
            for j in 0..d {
                let mean = ok.iter().map(|(t, _)| t[j]).sum::<f64>() / used;
                let var = ok.iter().map(|(t, _)| (t[j] - mean).powi(2)).sum::<f64>()
                    / (used - 1.0).max(1.0);
                let mse = ok.iter().map(|(t, _)| (t[j] - theta0[j]).powi(2)).sum::<f64>() / used;
                let covered = ok
                    .iter()
                    .filter(|(t, se)| (t[j] - theta0[j]).abs() <= Z_95 * se[j])
                    .count();
                s.mean[j] = mean;
                s.bias[j] = mean - theta0[j];
                s.variance[j] = var;
                s.mse[j] = mse;
                s.scaled_variance[j] = n as f64 * var;
                s.variance_ratio[j] = s.scaled_variance[j] / eff_diag[j];
                s.coverage[j] = covered as f64 / used;
                s.above_efficiency_floor &= s.scaled_variance[j] >= 0.8 * eff_diag[j];
            }
            summaries.push(s);
        }
    }

    let mut pairwise = Vec::new();
    // records are grouped per (n, replication) in kernel order
    let by_unit: BTreeMap<(usize, usize), Vec<&ReplicationRecord>> =
        records.iter().fold(BTreeMap::new(), |mut m, r| {
            m.entry((r.n, r.replication)).or_insert_with(Vec::new).push(r);
            m
        });
    for &n in &design.n_grid {
        for a in 0..kernels.len() {
            for b in a + 1..kernels.len() {
                let mut values: Vec<f64> = by_unit
                    .range((n, 0)..=(n, usize::MAX))
                    .filter_map(|(_, recs)| {
                        let ta = recs[a].theta_hat.as_ref()?;
                        let tb = recs[b].theta_hat.as_ref()?;
                        let dist = ta
                            .iter()
                            .zip(tb)
                            .map(|(x, y)| (x - y).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        Some((n as f64).sqrt() * dist)
                    })
                    .collect();
                pairwise.push(PairwiseDiscrepancy {
                    kernels: (kernels[a].name().to_owned(), kernels[b].name().to_owned()),
                    n,
                    pairs: values.len(),
                    median_scaled: median(&mut values),
                });
            }
        }
    }

    Ok(EfficiencyReport {
        model: model.name().to_owned(),
        generator: gen.clone(),
        design: design.clone(),
        rng: RNG_FAMILY.into(),
        theta0,
        efficient_covariance: (0..d).map(|i| eff.row(i).iter().copied().collect()).collect(),
        summaries,
        pairwise,
        excluded,
        total,
        records,
    })
}
