//! Criterion functions Λ for the saddle-point program.
//!
//! A kernel is the log-Laplace transform of a prior on the observation
//! weights, normalized so that Λ(0) = 0 and Λ′(0) = Λ″(0) = 1. Its convex
//! conjugate Λ* is the integrand of the f-divergence between the reweighted
//! and the plain empirical measure.
//!
//! | kernel          | Λ(s)          | domain | weights Λ′ |
//! |-----------------|---------------|--------|------------|
//! | `exponential-EL`| −log(1 − s)   | s < 1  | (0, ∞)     |
//! | `poisson-ET`    | eˢ − 1        | ℝ      | (0, ∞)     |
//! | `quadratic-CUE` | s + s²/2      | ℝ      | ℝ          |

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{GelError, Result};

/// Absolute tolerance (scaled by max(1, |y|)) on Λ′(s) − y when conjugating.
pub const CONJUGATE_TOL: f64 = 1e-10;

const MAX_BRACKET_STEPS: usize = 2100;
const MAX_ROOT_ITERS: usize = 400;

/// A user-supplied criterion. Implementations must be normalized and
/// strictly convex on their domain; [`DivergenceKernel::custom`] checks the
/// normalization.
pub trait Criterion: Send + Sync {
    fn value(&self, s: f64) -> f64;
    fn first(&self, s: f64) -> f64;
    fn second(&self, s: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelName {
    #[serde(rename = "exponential-EL")]
    ExponentialEl,
    #[serde(rename = "poisson-ET")]
    PoissonEt,
    #[serde(rename = "quadratic-CUE")]
    QuadraticCue,
}

impl KernelName {
    pub const ALL: [KernelName; 3] = [
        KernelName::ExponentialEl,
        KernelName::PoissonEt,
        KernelName::QuadraticCue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KernelName::ExponentialEl => "exponential-EL",
            KernelName::PoissonEt => "poisson-ET",
            KernelName::QuadraticCue => "quadratic-CUE",
        }
    }
}

impl fmt::Display for KernelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelName {
    type Err = GelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exponential-el" | "exponential" | "el" => Ok(KernelName::ExponentialEl),
            "poisson-et" | "poisson" | "et" => Ok(KernelName::PoissonEt),
            "quadratic-cue" | "quadratic" | "gaussian" | "cue" => Ok(KernelName::QuadraticCue),
            _ => Err(GelError::Config(format!(
                "unknown kernel '{s}' (expected exponential-EL, poisson-ET or quadratic-CUE)"
            ))),
        }
    }
}

#[derive(Clone)]
enum Form {
    ExponentialEl,
    PoissonEt,
    QuadraticCue,
    Custom(Arc<dyn Criterion>),
}

/// A normalized convex criterion with its derivatives and effective domain
/// `(domain_lower, domain_upper)`. Off-domain evaluation returns +∞.
#[derive(Clone)]
pub struct DivergenceKernel {
    name: String,
    form: Form,
    domain_lower: f64,
    domain_upper: f64,
    lambda2_bound: Option<f64>,
    weight_lower: f64,
}

impl fmt::Debug for DivergenceKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DivergenceKernel")
            .field("name", &self.name)
            .field("domain", &(self.domain_lower, self.domain_upper))
            .field("lambda2_bound", &self.lambda2_bound)
            .finish()
    }
}

/// Result of a numeric Legendre transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conjugate {
    pub value: f64,
    /// The maximizing s, when the supremum is attained inside the domain.
    pub argmax: Option<f64>,
}

impl Conjugate {
    fn unattained() -> Self {
        Conjugate {
            value: f64::INFINITY,
            argmax: None,
        }
    }

    pub fn attained(&self) -> bool {
        self.argmax.is_some()
    }
}

impl DivergenceKernel {
    pub fn builtin(name: KernelName) -> Self {
        match name {
            KernelName::ExponentialEl => DivergenceKernel {
                name: name.as_str().into(),
                form: Form::ExponentialEl,
                domain_lower: f64::NEG_INFINITY,
                domain_upper: 1.0,
                lambda2_bound: None,
                weight_lower: 0.0,
            },
            KernelName::PoissonEt => DivergenceKernel {
                name: name.as_str().into(),
                form: Form::PoissonEt,
                domain_lower: f64::NEG_INFINITY,
                domain_upper: f64::INFINITY,
                lambda2_bound: None,
                weight_lower: 0.0,
            },
            KernelName::QuadraticCue => DivergenceKernel {
                name: name.as_str().into(),
                form: Form::QuadraticCue,
                domain_lower: f64::NEG_INFINITY,
                domain_upper: f64::INFINITY,
                lambda2_bound: Some(1.0),
                weight_lower: f64::NEG_INFINITY,
            },
        }
    }

    /// Looks up a built-in kernel by its configuration name.
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::builtin(name.parse()?))
    }

    /// Wraps a custom criterion defined on the open interval `domain`.
    ///
    /// `weight_lower` is the infimum of Λ′ over the domain (0 for priors
    /// supported on the positive half-line, −∞ for full-line priors); it
    /// selects the feasibility geometry.
    pub fn custom(
        name: impl Into<String>,
        criterion: Arc<dyn Criterion>,
        domain: (f64, f64),
        lambda2_bound: Option<f64>,
        weight_lower: f64,
    ) -> Result<Self> {
        let name = name.into();
        let (lo, hi) = domain;
        if !(lo < 0.0 && 0.0 < hi) {
            return Err(GelError::Config(format!(
                "kernel '{name}': domain ({lo}, {hi}) must contain 0 in its interior"
            )));
        }
        let checks = [
            ("Λ(0) = 0", criterion.value(0.0), 0.0),
            ("Λ′(0) = 1", criterion.first(0.0), 1.0),
            ("Λ″(0) = 1", criterion.second(0.0), 1.0),
        ];
        for (what, got, want) in checks {
            if !((got - want).abs() <= 1e-9) {
                return Err(GelError::Config(format!(
                    "kernel '{name}' is not normalized: {what} violated (got {got})"
                )));
            }
        }
        Ok(DivergenceKernel {
            name,
            form: Form::Custom(criterion),
            domain_lower: lo,
            domain_upper: hi,
            lambda2_bound,
            weight_lower,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain_lower(&self) -> f64 {
        self.domain_lower
    }

    pub fn domain_upper(&self) -> f64 {
        self.domain_upper
    }

    /// Finite K with Λ″ ≤ K, if one exists.
    pub fn lambda2_bound(&self) -> Option<f64> {
        self.lambda2_bound
    }

    /// Infimum of the attainable weights Λ′(s).
    pub fn weight_lower(&self) -> f64 {
        self.weight_lower
    }

    #[inline]
    pub fn in_domain(&self, s: f64) -> bool {
        s > self.domain_lower && s < self.domain_upper
    }

    #[inline]
    pub fn lambda(&self, s: f64) -> f64 {
        if !self.in_domain(s) {
            return f64::INFINITY;
        }
        match &self.form {
            Form::ExponentialEl => -(-s).ln_1p(),
            Form::PoissonEt => s.exp_m1(),
            Form::QuadraticCue => s + 0.5 * s * s,
            Form::Custom(c) => c.value(s),
        }
    }

    #[inline]
    pub fn lambda1(&self, s: f64) -> f64 {
        if !self.in_domain(s) {
            return f64::INFINITY;
        }
        match &self.form {
            Form::ExponentialEl => 1.0 / (1.0 - s),
            Form::PoissonEt => s.exp(),
            Form::QuadraticCue => 1.0 + s,
            Form::Custom(c) => c.first(s),
        }
    }

    #[inline]
    pub fn lambda2(&self, s: f64) -> f64 {
        if !self.in_domain(s) {
            return f64::INFINITY;
        }
        match &self.form {
            Form::ExponentialEl => {
                let r = 1.0 / (1.0 - s);
                r * r
            }
            Form::PoissonEt => s.exp(),
            Form::QuadraticCue => 1.0,
            Form::Custom(c) => c.second(s),
        }
    }

    /// Λ*(y) = sup_s { s·y − Λ(s) }, found by solving Λ′(s) = y with a
    /// bracketed Newton iteration. Returns +∞ (unattained) when y is outside
    /// the range of Λ′.
    pub fn conjugate(&self, y: f64) -> Conjugate {
        if !y.is_finite() {
            return Conjugate::unattained();
        }
        if y == 1.0 {
            return Conjugate {
                value: 0.0,
                argmax: Some(0.0),
            };
        }
        let Some((mut lo, mut hi)) = self.bracket(y) else {
            return Conjugate::unattained();
        };

        let tol = CONJUGATE_TOL * y.abs().max(1.0);
        let mut s = 0.5 * (lo + hi);
        for _ in 0..MAX_ROOT_ITERS {
            let r = self.lambda1(s) - y;
            if r.abs() <= tol {
                break;
            }
            if r < 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let newton = s - r / self.lambda2(s);
            s = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= f64::EPSILON * s.abs().max(1.0) {
                break;
            }
        }
        Conjugate {
            value: s * y - self.lambda(s),
            argmax: Some(s),
        }
    }

    /// Finds a < b inside the domain with Λ′(a) ≤ y ≤ Λ′(b), starting from
    /// s = 0 where Λ′ = 1.
    fn bracket(&self, y: f64) -> Option<(f64, f64)> {
        let upward = y > 1.0;
        let edge = if upward {
            self.domain_upper
        } else {
            self.domain_lower
        };
        let mut inner = 0.0;
        let mut step = 1.0;
        for _ in 0..MAX_BRACKET_STEPS {
            let probe = if edge.is_finite() {
                // halve the remaining distance to a finite edge
                0.5 * (inner + edge)
            } else {
                let p = if upward { inner + step } else { inner - step };
                step *= 2.0;
                p
            };
            if !probe.is_finite() || !self.in_domain(probe) || probe == inner {
                return None;
            }
            let d = self.lambda1(probe);
            let reached = if upward { d >= y } else { d <= y };
            if reached {
                return Some(if upward { (inner, probe) } else { (probe, inner) });
            }
            inner = probe;
        }
        None
    }

    /// (1/n) Σ Λ*(wᵢ): the f-divergence of the measure with weights `w`
    /// from the plain empirical measure.
    pub fn divergence_value(&self, weights: &[f64]) -> Result<f64> {
        if weights.is_empty() {
            return Err(GelError::Data("empty weight vector".into()));
        }
        let n = weights.len() as f64;
        let mean = weights.iter().sum::<f64>() / n;
        if (mean - 1.0).abs() > 1e-8 {
            return Err(GelError::Data(format!(
                "weights must average to 1 (mean is {mean})"
            )));
        }
        let mut total = 0.0;
        for &w in weights {
            let c = self.conjugate(w);
            if !c.attained() {
                return Ok(f64::INFINITY);
            }
            total += c.value;
        }
        Ok(total / n)
    }
}
