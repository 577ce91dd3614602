mod common;

use common::{cue_objective, cue_oracle, el_oracle, et_oracle, mean_variance, standard_normals};
use gelmem::solver::{inner_maximize, outer_minimize};
use gelmem::{DivergenceKernel, KernelName, Sample, SolverOptions};
use nalgebra::DVector;

fn column(s: &Sample) -> Vec<f64> {
    s.rows().map(|r| r[0]).collect()
}

fn solve(kernel: KernelName, sample: &Sample) -> f64 {
    let k = DivergenceKernel::builtin(kernel);
    outer_minimize(&mean_variance(), sample, &k, &SolverOptions::default())
        .unwrap()
        .theta_hat[0]
}

#[test]
fn cue_matches_quadratic_form_minimizer() {
    let sample = standard_normals(20, 20);
    let oracle = cue_oracle(&column(&sample));
    let got = solve(KernelName::QuadraticCue, &sample);
    assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
}

#[test]
fn el_matches_profile_likelihood_maximizer() {
    let sample = standard_normals(20, 20);
    let oracle = el_oracle(&column(&sample));
    let got = solve(KernelName::ExponentialEl, &sample);
    assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
}

#[test]
fn seeded_fifty_point_dataset_all_kernels() {
    let sample = standard_normals(50, 1234);
    let xs = column(&sample);
    let pairs = [
        (KernelName::ExponentialEl, el_oracle(&xs)),
        (KernelName::PoissonEt, et_oracle(&xs)),
        (KernelName::QuadraticCue, cue_oracle(&xs)),
    ];
    for (kernel, oracle) in pairs {
        let got = solve(kernel, &sample);
        assert!((got - oracle).abs() < 1e-6, "{kernel:?}: {got} vs {oracle}");
    }
}

#[test]
fn cue_profile_value_has_closed_form() {
    // with Λ(s) = s + s²/2 the inner supremum is ½q/(1 − q), q = Q(θ)
    let sample = standard_normals(15, 3);
    let xs = column(&sample);
    let cue = DivergenceKernel::builtin(KernelName::QuadraticCue);
    for t in [-0.7, -0.1, 0.25, 0.9] {
        let q = cue_objective(&xs, t);
        let inner = inner_maximize(
            &mean_variance(),
            &sample,
            &cue,
            &DVector::from_element(1, t),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((inner.value - 0.5 * q / (1.0 - q)).abs() < 1e-10);
    }
}

#[test]
fn biconjugation_recovers_criterion() {
    // Λ(s) = sup_y { s·y − Λ*(y) }, evaluated by golden section on y
    for name in KernelName::ALL {
        let k = DivergenceKernel::builtin(name);
        for i in 0..20 {
            let s = -1.5 + 2.0 * i as f64 / 19.0;
            if !k.in_domain(s) {
                continue;
            }
            let neg = |y: f64| -(s * y - k.conjugate(y).value);
            let lo = if k.weight_lower() >= 0.0 { 1e-9 } else { -20.0 };
            let y = common::golden_section(neg, lo, 20.0, 1e-10);
            let recovered = s * y - k.conjugate(y).value;
            assert!(
                (recovered - k.lambda(s)).abs() < 1e-5,
                "{name:?} at s = {s}: {recovered} vs {}",
                k.lambda(s)
            );
        }
    }
}
