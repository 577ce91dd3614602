//! Rate experiment: CUE on the mean-variance model with an additive c/m
//! perturbation of the moments.

use gelmem::approx::{rate_experiment, ApproxFamily, PerturbationSpec, Rate, RateDesign, Schedule};
use gelmem::harness::DataGenerator;
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
        &PerturbationSpec::Shift {
            c: 1.0,
            direction: vec![1.0, 1.0],
        },
        Rate::Power { exponent: 1.0 },
    )?;
    let gen = DataGenerator::Normal {
        mean: 0.0,
        variance: 1.0,
    };
    let design = RateDesign {
        n_grid: vec![400],
        m_grid: vec![4, 16, 64, 256],
        schedules: vec![Schedule::Linear, Schedule::SqrtCeil],
        schedule_n: vec![100, 400],
        replications: 20,
        seed: 2024,
        allow_unbounded_curvature: false,
    };
    let cue = DivergenceKernel::builtin(KernelName::QuadraticCue);
    let report = rate_experiment(&family, &gen, &cue, &design, &SolverOptions::default(), 0)?;

    println!("median |theta_m - theta| at n = {}:", report.slope_n);
    for c in report.cells.iter().filter(|c| c.n == report.slope_n && design.m_grid.contains(&c.m)) {
        println!("  m = {:>4}  {:.3e}", c.m, c.median_discrepancy);
    }
    println!("log-log slope against phi_m: {:.3}", report.slope);
    for s in &report.equivalence {
        let meds: Vec<String> = s.points.iter().map(|p| format!("n={} m={} {:.3e}", p.0, p.1, p.3)).collect();
        println!("{:<16} {}", s.label, meds.join(", "));
    }
    println!("excluded {} of {}", report.excluded, report.total);
    Ok(())
}
