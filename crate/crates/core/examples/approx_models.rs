//! Approximate moment functions Φ_m: sup-norm distance to Φ at rate 1/m,
//! and the estimate as m grows.

use gelmem::approx::{approx_model, estimate_approx, rate_constant, ApproxFamily, MIndex, PerturbationSpec, Rate};
use gelmem::harness::{generate, DataGenerator};
use gelmem::{builtin_model, DivergenceKernel, KernelName, ModelParams, SolverOptions};

fn main() -> gelmem::Result<()> {
    let base = builtin_model(
        "mean-variance",
        &ModelParams {
            sigma2: Some(1.0),
            ..Default::default()
        },
    )?;
    let family = ApproxFamily::from_spec(
        base,
        &PerturbationSpec::Oscillation {
            c: 0.5,
            direction: vec![1.0, 0.0],
        },
        Rate::Power { exponent: 1.0 },
    )?;
    let rc = rate_constant(&family, &[1, 2, 4, 8, 16])?;
    for s in &rc.norms {
        println!("m = {:>2}: sup|Phi_m - Phi| = {:.4}  (x phi_m = {:.4})", s.m, s.value, s.value * s.phi_m);
    }
    println!("fitted C = {:.4}", rc.c);

    let sample = generate(&DataGenerator::Normal { mean: 0.0, variance: 1.0 }, 400, 8, 0)?;
    let cue = DivergenceKernel::builtin(KernelName::QuadraticCue);
    let opts = SolverOptions::default();
    let exact = estimate_approx(&family, MIndex::Infinite, &sample, &cue, &opts)?.theta_hat[0];
    for m in [2, 8, 32, 128] {
        let r = estimate_approx(&family, MIndex::Finite(m), &sample, &cue, &opts)?;
        println!("m = {m:>3}: theta = {:.6}  |theta_m - theta| = {:.2e}", r.theta_hat[0], (r.theta_hat[0] - exact).abs());
    }
    let model = approx_model(&family, MIndex::Finite(4))?;
    println!("Phi_4 at theta = 0, x = 1: {:?}", model.phi(&nalgebra::DVector::zeros(1), &[1.0]).as_slice());
    Ok(())
}
