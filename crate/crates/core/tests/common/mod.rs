//! Independent reference computations shared by the integration tests.
//! Nothing here calls the solver.

#![allow(dead_code)]

use gelmem::harness::{generate, DataGenerator};
use gelmem::{builtin_model, MomentModel, ModelParams, Sample};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Half-width of the parameter box used with small samples. With the
/// default [-10, 10] and 8 starts the nearest grid points are ±1.25, which
/// a short standard-normal sample can leave outside the EL feasible set.
pub const BOX: f64 = 3.0;

/// Mean-variance model with σ₀² = 1 on [-BOX, BOX].
pub fn mean_variance() -> MomentModel {
    builtin_model(
        "mean-variance",
        &ModelParams {
            sigma2: Some(1.0),
            theta_lower: Some(vec![-BOX]),
            theta_upper: Some(vec![BOX]),
            ..Default::default()
        },
    )
    .unwrap()
}

pub fn standard_normals(n: usize, seed: u64) -> Sample {
    let gen = DataGenerator::Normal {
        mean: 0.0,
        variance: 1.0,
    };
    generate(&gen, n, seed, 0).unwrap()
}

/// Φ values of the mean-variance model with σ₀² = 1, and ∂Φ/∂θ.
fn mv_phi(x: f64, t: f64) -> (Vector2<f64>, Vector2<f64>) {
    (
        Vector2::new(x - t, x * x - t * t - 1.0),
        Vector2::new(-1.0, -2.0 * t),
    )
}

/// Q(θ) = P_n[Φ]ᵗ (P_n[ΦΦᵗ])⁻¹ P_n[Φ] for the mean-variance model.
pub fn cue_objective(xs: &[f64], t: f64) -> f64 {
    let n = xs.len() as f64;
    let mut m = Vector2::zeros();
    let mut s = Matrix2::zeros();
    for &x in xs {
        let (p, _) = mv_phi(x, t);
        m += p;
        s += p * p.transpose();
    }
    m /= n;
    s /= n;
    let sol = s.lu().solve(&m).expect("nonsingular second-moment matrix");
    m.dot(&sol)
}

pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Dense grid over [lo, hi] followed by golden-section refinement around
/// the best grid point.
pub fn grid_golden(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> f64 {
    let h = (hi - lo) / (points - 1) as f64;
    let best = (0..points)
        .map(|i| (i, f(lo + h * i as f64)))
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("some finite value")
        .0;
    let a = (lo + h * best as f64 - h).max(lo);
    let b = (lo + h * best as f64 + h).min(hi);
    golden_section(f, a, b, 1e-12)
}

/// CUE minimizer of the mean-variance model over [-BOX, BOX].
pub fn cue_oracle(xs: &[f64]) -> f64 {
    grid_golden(|t| cue_objective(xs, t), -BOX, BOX, 20_001)
}

// -- EL and ET by Lagrangian bisection -------------------------------------

/// Concave dual integrands ψ: the estimate is argmin over θ of
/// max over t of Σ ψ(tᵗΦᵢ(θ)).
#[derive(Debug, Clone, Copy)]
pub enum Dual {
    /// ψ(z) = log*(1 + z), Owen's pseudo-logarithm below 1/n; maximizing
    /// Σ log wᵢ subject to the constraints.
    El,
    /// ψ(z) = −eᶻ; exponential tilting.
    Et,
}

impl Dual {
    /// (ψ(z), ψ′(z)) for a sample of size n.
    fn eval(self, z: f64, n: f64) -> (f64, f64) {
        match self {
            Dual::El => {
                let eps = 1.0 / n;
                let z = 1.0 + z;
                if z >= eps {
                    (z.ln(), 1.0 / z)
                } else {
                    let u = z / eps;
                    (eps.ln() - 1.5 + 2.0 * u - 0.5 * u * u, (2.0 - u) / eps)
                }
            }
            Dual::Et => {
                let e = z.exp();
                (-e, -e)
            }
        }
    }
}

/// Root of a decreasing function by bracket expansion and bisection;
/// `None` if no sign change is found or `g` fails or overflows.
fn decreasing_root(g: impl Fn(f64) -> Option<f64>) -> Option<f64> {
    let g = |x: f64| g(x).filter(|v| v.is_finite());
    let mut width = 1.0;
    while g(-width)? < 0.0 {
        width *= 2.0;
        if width > 1e12 {
            return None;
        }
    }
    let mut lo = -width;
    width = 1.0;
    while g(width)? > 0.0 {
        width *= 2.0;
        if width > 1e12 {
            return None;
        }
    }
    let mut hi = width;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Maximizer t of Σ ψ(tᵗΦᵢ) by nested bisection: the inner loop solves
/// ∂/∂t₂ = 0 for fixed t₁, the outer loop bisects on the envelope
/// derivative in t₁. `None` when no finite maximizer exists (θ infeasible).
pub fn dual_argmax(psi: Dual, phis: &[Vector2<f64>]) -> Option<Vector2<f64>> {
    let n = phis.len() as f64;
    let partial = |t1: f64, t2: f64, c: usize| -> f64 {
        phis.iter()
            .map(|p| psi.eval(t1 * p[0] + t2 * p[1], n).1 * p[c])
            .sum()
    };
    let t2_of = |t1: f64| decreasing_root(|t2| Some(partial(t1, t2, 1)));
    let t1 = decreasing_root(|t1| Some(partial(t1, t2_of(t1)?, 0)))?;
    Some(Vector2::new(t1, t2_of(t1)?))
}

/// Dual value max over t of Σ ψ(tᵗΦᵢ(θ)) and its θ-derivative.
pub fn dual_value(psi: Dual, xs: &[f64], t: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let phis: Vec<Vector2<f64>> = xs.iter().map(|&x| mv_phi(x, t).0).collect();
    let Some(lam) = dual_argmax(psi, &phis) else {
        return (f64::INFINITY, f64::NAN);
    };
    let mut value = 0.0;
    let mut slope = 0.0;
    for &x in xs {
        let (p, dp) = mv_phi(x, t);
        let (v, v1) = psi.eval(lam.dot(&p), n);
        value += v;
        slope += v1 * lam.dot(&dp);
    }
    (value, slope)
}

/// Mean-variance estimate under `psi`: minimize the dual value over a grid
/// on (min x, max x), then bisect its derivative.
pub fn dual_oracle(psi: Dual, xs: &[f64]) -> f64 {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let points = 401;
    let h = (hi - lo) / (points + 1) as f64;
    let (best, _) = (1..=points)
        .map(|i| (i, dual_value(psi, xs, lo + h * i as f64).0))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let (mut a, mut b) = (lo + h * (best - 1) as f64, lo + h * (best + 1) as f64);
    let slope = |t: f64| dual_value(psi, xs, t).1;
    assert!(slope(a) <= 0.0 && slope(b) >= 0.0, "no sign change around the grid minimum");
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if slope(mid) > 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    0.5 * (a + b)
}

pub fn el_oracle(xs: &[f64]) -> f64 {
    dual_oracle(Dual::El, xs)
}

pub fn et_oracle(xs: &[f64]) -> f64 {
    dual_oracle(Dual::Et, xs)
}

// -- linear algebra references ----------------------------------------------

/// Central-difference Jacobian of f at x (rows: outputs).
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let fx = f(x);
    let mut j = DMatrix::zeros(fx.len(), x.len());
    for c in 0..x.len() {
        let mut p = x.clone();
        let mut m = x.clone();
        p[c] += h;
        m[c] -= h;
        j.set_column(c, &((f(&p) - f(&m)) / (2.0 * h)));
    }
    j
}

/// θ-block of the solution of [[0, D], [Dᵗ, V]] (Δθ, Δv) = (0, −g) by LU.
pub fn bordered_solve(d: &DMatrix<f64>, v: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let (dd, k) = d.shape();
    let mut m = DMatrix::zeros(dd + k, dd + k);
    m.view_mut((0, dd), (dd, k)).copy_from(d);
    m.view_mut((dd, 0), (k, dd)).copy_from(&d.transpose());
    m.view_mut((dd, dd), (k, k)).copy_from(v);
    let mut rhs = DVector::zeros(dd + k);
    rhs.rows_mut(dd, k).copy_from(&(-g));
    m.lu().solve(&rhs).expect("nonsingular bordered system").rows(0, dd).into_owned()
}

/// −(D V⁻¹ Dᵗ)⁻¹ D V⁻¹ g with explicit inverses.
pub fn explicit_schur(d: &DMatrix<f64>, v: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let vi = v.clone().try_inverse().unwrap();
    let s = (d * &vi * d.transpose()).try_inverse().unwrap();
    -(s * d * vi * g)
}

/// A model, sample and point (θ, v) for Jacobian checks; cycles through the
/// mean, mean-variance and linear-IV (d = 2, k = 3) models.
pub fn random_instance(rng: &mut ChaCha8Rng, i: usize) -> (MomentModel, Sample, DVector<f64>, DVector<f64>) {
    let n = 25;
    match i % 3 {
        0 => {
            let m = builtin_model("mean", &ModelParams::default()).unwrap();
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            (m, Sample::from_column(&xs).unwrap(), DVector::from_element(1, rng.random_range(-1.0..1.0)), DVector::from_element(1, rng.random_range(-0.1..0.1)))
        }
        1 => {
            let m = builtin_model(
                "mean-variance",
                &ModelParams {
                    sigma2: Some(1.0),
                    ..Default::default()
                },
            )
            .unwrap();
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v = DVector::from_fn(2, |_, _| rng.random_range(-0.05..0.05));
            (m, Sample::from_column(&xs).unwrap(), DVector::from_element(1, rng.random_range(-1.0..1.0)), v)
        }
        _ => {
            let m = builtin_model(
                "linear-iv",
                &ModelParams {
                    d: Some(2),
                    k: Some(3),
                    ..Default::default()
                },
            )
            .unwrap();
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let theta = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let v = DVector::from_fn(3, |_, _| rng.random_range(-0.1..0.1));
            (m, Sample::new(rows).unwrap(), theta, v)
        }
    }
}
