//! Small efficiency study: variance of sqrt(n)(θ̂ − θ₀) against the bound,
//! and Wald coverage, for all kernels on common random numbers.

use gelmem::harness::{monte_carlo, DataGenerator, MonteCarloDesign};
use gelmem::{builtin_model, DivergenceKernel, KernelName, ModelParams, SolverOptions};

fn main() -> gelmem::Result<()> {
    let model = builtin_model(
        "mean-variance",
        &ModelParams {
            sigma2: Some(1.0),
            ..Default::default()
        },
    )?;
    let gen = DataGenerator::Normal { mean: 0.0, variance: 1.0 };
    let kernels: Vec<_> = KernelName::ALL.into_iter().map(DivergenceKernel::builtin).collect();
    let design = MonteCarloDesign {
        n_grid: vec![100, 400],
        replications: 200,
        seed: 42,
    };
    let report = monte_carlo(&gen, &model, &kernels, &design, &SolverOptions::default(), 0)?;
    println!("efficiency bound {:.4}", report.efficient_covariance[0][0]);
    for s in &report.summaries {
        println!(
            "n = {:>4} {:<15} n*var = {:.4} ratio = {:.3} coverage = {:.3}",
            s.n, s.kernel, s.scaled_variance[0], s.variance_ratio[0], s.coverage[0]
        );
    }
    for p in &report.pairwise {
        println!("n = {:>4} {} vs {}: median sqrt(n)|diff| = {:.4}", p.n, p.kernels.0, p.kernels.1, p.median_scaled);
    }
    println!("excluded {} of {}", report.excluded, report.total);
    Ok(())
}
