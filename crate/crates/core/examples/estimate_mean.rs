//! Just-identified case: every kernel returns the sample mean with unit
//! weights.

use gelmem::estimator::estimate;
use gelmem::{builtin_model, DivergenceKernel, KernelName, ModelParams, Sample, SolverOptions};

fn main() -> gelmem::Result<()> {
    let xs = [2.1, 3.4, 1.9, 2.8, 3.0, 2.2, 2.6];
    let sample = Sample::from_column(&xs)?;
    // positive-weight kernels need a multistart point inside (min x, max x)
    let model = builtin_model(
        "mean",
        &ModelParams {
            theta_lower: Some(vec![0.0]),
            theta_upper: Some(vec![5.0]),
            ..Default::default()
        },
    )?;
    println!("sample mean {:.10}", xs.iter().sum::<f64>() / xs.len() as f64);
    for name in KernelName::ALL {
        let r = estimate(&model, &sample, &DivergenceKernel::builtin(name), &SolverOptions::default())?;
        println!(
            "{:<15} theta = {:.10}  se = {:.6}  divergence = {:.1e}  weights in [{:.12}, {:.12}]",
            r.kernel, r.theta_hat[0], r.std_errors[0], r.divergence, r.weight_summary.min, r.weight_summary.max
        );
    }
    Ok(())
}
