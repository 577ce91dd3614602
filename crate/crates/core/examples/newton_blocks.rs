//! Jacobian blocks of the first-order map at a solution, and the Newton
//! direction in θ from the Schur complement.

use gelmem::solver::{first_order_map, newton_blocks, outer_minimize, schur_update};
use gelmem::harness::{generate, DataGenerator};
use gelmem::{builtin_model, DivergenceKernel, KernelName, ModelParams, SolverOptions};
use nalgebra::DVector;

fn main() -> gelmem::Result<()> {
    let model = builtin_model(
        "mean-variance",
        &ModelParams {
            sigma2: Some(1.0),
            ..Default::default()
        },
    )?;
    let sample = generate(&DataGenerator::Normal { mean: 0.0, variance: 1.0 }, 200, 3, 0)?;
    let kernel = DivergenceKernel::builtin(KernelName::PoissonEt);
    let sol = outer_minimize(&model, &sample, &kernel, &SolverOptions::default())?;
    let theta = DVector::from_vec(sol.theta_hat.clone());
    let v = DVector::from_vec(sol.inner.lambda.clone());

    let blocks = newton_blocks(&model, &sample, &kernel, &theta, &v)?;
    println!("A = {}", blocks.a);
    println!("D = {}", blocks.d);
    println!("V = {}", blocks.v);
    println!("eigenvalues of the full Jacobian: {:?}", blocks.eigenvalues());

    // one Newton step from a perturbed θ
    let off = DVector::from_element(1, theta[0] + 0.05);
    let h = first_order_map(&model, &sample, &kernel, &off, &v)?;
    let b = newton_blocks(&model, &sample, &kernel, &off, &v)?;
    let g = h.rows(1, 2).into_owned();
    let step = schur_update(&b.d, &b.v, &g)?;
    println!("theta_hat {:.6}, start {:.6}, after one step {:.6}", theta[0], off[0], off[0] + step[0]);
    Ok(())
}
