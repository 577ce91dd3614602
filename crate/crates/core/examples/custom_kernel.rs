//! A user-supplied criterion: the Hellinger member of the Cressie-Read
//! family, L(s) = 2s/(2 − s).

use std::sync::Arc;

use gelmem::estimator::estimate;
use gelmem::kernel::Criterion;
use gelmem::harness::{generate, DataGenerator};
use gelmem::{builtin_model, DivergenceKernel, ModelParams, SolverOptions};

struct Hellinger;

impl Criterion for Hellinger {
    fn value(&self, s: f64) -> f64 {
        2.0 * s / (2.0 - s)
    }
    fn first(&self, s: f64) -> f64 {
        4.0 / (2.0 - s).powi(2)
    }
    fn second(&self, s: f64) -> f64 {
        8.0 / (2.0 - s).powi(3)
    }
}

fn main() -> gelmem::Result<()> {
    // weights L'(s) are positive; L'' is unbounded as s -> 2
    let kernel = DivergenceKernel::custom("hellinger", Arc::new(Hellinger), (f64::NEG_INFINITY, 2.0), None, 0.0)?;
    let model = builtin_model(
        "mean-variance",
        &ModelParams {
            sigma2: Some(1.0),
            ..Default::default()
        },
    )?;
    let sample = generate(&DataGenerator::Normal { mean: 0.0, variance: 1.0 }, 300, 5, 0)?;
    let r = estimate(&model, &sample, &kernel, &SolverOptions::default())?;
    print!("{r}");
    Ok(())
}
