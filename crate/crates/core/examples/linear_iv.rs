//! Linear instrumental-variables regression with one endogenous regressor
//! and three instruments.

use gelmem::estimator::estimate;
use gelmem::harness::{generate, DataGenerator};
use gelmem::{builtin_model, DivergenceKernel, KernelName, ModelParams, SolverOptions};

fn main() -> gelmem::Result<()> {
    let gen = DataGenerator::LinearIv {
        theta0: vec![1.5],
        pi: vec![vec![0.6], vec![0.4], vec![0.3]],
        z_cov: vec![vec![1.0, 0.2, 0.0], vec![0.2, 1.0, 0.2], vec![0.0, 0.2, 1.0]],
        sigma_u: 1.0,
        sigma_e: 1.0,
        rho: 0.5,
    };
    let model = builtin_model(
        "linear-iv",
        &ModelParams {
            d: Some(1),
            k: Some(3),
            ..Default::default()
        },
    )?;
    let pop = gen.population(&model)?;
    println!("efficient sd of theta: {:.4}", pop.efficient_covariance()?[(0, 0)].sqrt());

    let sample = generate(&gen, 500, 7, 0)?;
    // naive least squares of y on w is biased by the endogeneity
    let (mut syw, mut sww) = (0.0, 0.0);
    for r in sample.rows() {
        syw += r[0] * r[1];
        sww += r[1] * r[1];
    }
    println!("least squares: {:.4}", syw / sww);
    for name in KernelName::ALL {
        let r = estimate(&model, &sample, &DivergenceKernel::builtin(name), &SolverOptions::default())?;
        println!(
            "{:<15} theta = {:.4} (se {:.4}, sqrt(n) se {:.4})",
            r.kernel,
            r.theta_hat[0],
            r.std_errors[0],
            r.std_errors[0] * (r.n as f64).sqrt()
        );
    }
    Ok(())
}
