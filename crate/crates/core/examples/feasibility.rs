//! Where the inner problem is bounded: scan θ for a small sample under
//! each kernel.

use gelmem::estimator::{feasibility_check, Verdict};
use gelmem::solver::inner_maximize;
use gelmem::{builtin_model, DivergenceKernel, KernelName, ModelParams, Sample, SolverOptions};
use nalgebra::DVector;

fn main() -> gelmem::Result<()> {
    let model = builtin_model(
        "mean-variance",
        &ModelParams {
            sigma2: Some(1.0),
            ..Default::default()
        },
    )?;
    let sample = Sample::from_column(&[-1.2, -0.4, 0.1, 0.7, 1.6])?;
    for name in KernelName::ALL {
        let kernel = DivergenceKernel::builtin(name);
        println!("{}", kernel.name());
        for t in [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
            let theta = DVector::from_element(1, t);
            let f = feasibility_check(&model, &sample, &kernel, &theta);
            let inner = match inner_maximize(&model, &sample, &kernel, &theta, &SolverOptions::default()) {
                Ok(s) => format!("{:.6}", s.value),
                Err(e) => e.to_string(),
            };
            let verdict = match f.verdict {
                Verdict::Feasible => "feasible",
                Verdict::Infeasible => "infeasible",
                Verdict::Indeterminate => "indeterminate",
            };
            println!("  theta {t:>5}: {verdict:<13} inner value {inner}");
        }
    }
    Ok(())
}
