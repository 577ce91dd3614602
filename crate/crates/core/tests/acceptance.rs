//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails.

mod common;

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{bordered_solve, cue_oracle, el_oracle, fd_jacobian, mean_variance, random_instance, standard_normals};
use gelmem::approx::{rate_experiment, ApproxFamily, PerturbationSpec, Rate, RateDesign, Schedule};
use gelmem::harness::{monte_carlo, DataGenerator, MonteCarloDesign};
use gelmem::solver::{first_order_map, newton_blocks, outer_minimize, schur_update, SaddleSolution};
use gelmem::{builtin_model, DivergenceKernel, KernelName, MomentModel, ModelParams, Sample, SolverOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: f64) -> Outcome {
    let s = elapsed.as_secs_f64();
    check(s < limit, format!("{s:.2}s of {limit}s"))
}

fn kernels() -> Vec<DivergenceKernel> {
    KernelName::ALL.into_iter().map(DivergenceKernel::builtin).collect()
}

fn column(s: &Sample) -> Vec<f64> {
    s.rows().map(|r| r[0]).collect()
}

/// Worst normalization and moment residuals of a returned solution.
fn residuals(model: &MomentModel, sample: &Sample, sol: &SaddleSolution) -> (f64, f64) {
    let n = sample.n() as f64;
    let theta = DVector::from_vec(sol.theta_hat.clone());
    let mass = sol.weights.iter().sum::<f64>() / n;
    let mut m = DVector::zeros(model.dims().k);
    for (x, w) in sample.rows().zip(&sol.weights) {
        m += model.phi(&theta, x) * *w;
    }
    ((mass - 1.0).abs(), (m / n).norm())
}

#[derive(Default)]
struct Residuals {
    solutions: usize,
    mass: f64,
    moment: f64,
}

impl Residuals {
    fn add(&mut self, model: &MomentModel, sample: &Sample, sol: &SaddleSolution) {
        let (a, b) = residuals(model, sample, sol);
        self.solutions += 1;
        self.mass = self.mass.max(a);
        self.moment = self.moment.max(b);
    }
}

fn conjugacy() -> Outcome {
    let t = Instant::now();
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for k in kernels() {
        worst.0 = worst
            .0
            .max(k.lambda(0.0).abs())
            .max((k.lambda1(0.0) - 1.0).abs())
            .max((k.lambda2(0.0) - 1.0).abs());
        worst.1 = worst.1.max(k.conjugate(1.0).value.abs());
        for i in 0..20 {
            let s = -1.5 + 2.0 * i as f64 / 19.0;
            let neg = |y: f64| -(s * y - k.conjugate(y).value);
            let lo = if k.weight_lower() >= 0.0 { 1e-9 } else { -20.0 };
            let y = common::golden_section(neg, lo, 20.0, 1e-10);
            worst.2 = worst.2.max((s * y - k.conjugate(y).value - k.lambda(s)).abs());
        }
    }
    within(t.elapsed(), 1.0)?;
    check(
        worst.0 <= 1e-12 && worst.1 <= 1e-8 && worst.2 <= 1e-5,
        format!("normalization {:.1e}, conjugate at 1 {:.1e}, biconjugate {:.1e}", worst.0, worst.1, worst.2),
    )
}

fn just_identified(res: &mut Residuals) -> Outcome {
    let t = Instant::now();
    let model = builtin_model("mean", &ModelParams::default()).unwrap();
    let (mut dtheta, mut dw, mut div) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..25 {
        let sample = standard_normals(30, 500 + seed);
        let mean = sample.column_mean(0);
        for k in kernels() {
            let sol = outer_minimize(&model, &sample, &k, &SolverOptions::default())
                .map_err(|e| format!("seed {seed}, {}: {e}", k.name()))?;
            res.add(&model, &sample, &sol);
            dtheta = dtheta.max((sol.theta_hat[0] - mean).abs());
            dw = sol.weights.iter().fold(dw, |a, w| a.max((w - 1.0).abs()));
            div = div.max(sol.divergence);
        }
    }
    within(t.elapsed(), 5.0)?;
    check(
        dtheta <= 1e-8 && dw <= 1e-8 && div <= 1e-12,
        format!("|theta - mean| {dtheta:.1e}, |w - 1| {dw:.1e}, divergence {div:.1e}"),
    )
}

fn oracle_equivalence(kernel: KernelName, oracle: fn(&[f64]) -> f64, limit: f64, res: &mut Residuals) -> Outcome {
    let t = Instant::now();
    let model = mean_variance();
    let k = DivergenceKernel::builtin(kernel);
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let sample = standard_normals(50, 900 + seed);
        let sol = outer_minimize(&model, &sample, &k, &SolverOptions::default())
            .map_err(|e| format!("seed {seed}: {e}"))?;
        res.add(&model, &sample, &sol);
        worst = worst.max((sol.theta_hat[0] - oracle(&column(&sample))).abs());
    }
    within(t.elapsed(), limit)?;
    check(worst <= 1e-6, format!("max |theta - oracle| {worst:.1e}"))
}

fn saddle_residuals(res: &Residuals) -> Outcome {
    check(
        res.solutions > 0 && res.mass <= 1e-8 && res.moment <= 1e-6,
        format!(
            "{} solutions, |mass - 1| {:.1e}, |P_n(w)[Phi]| {:.1e}",
            res.solutions, res.mass, res.moment
        ),
    )
}

fn newton_blocks_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut worst_fd = 0.0f64;
    for i in 0..20 {
        let (model, sample, theta, v) = random_instance(&mut rng, i);
        let kernel = DivergenceKernel::builtin(KernelName::ALL[i % 3]);
        let d = theta.len();
        let blocks = newton_blocks(&model, &sample, &kernel, &theta, &v).map_err(|e| e.to_string())?;
        let z = DVector::from_iterator(d + v.len(), theta.iter().chain(v.iter()).copied());
        let fd = fd_jacobian(
            |z| {
                let t = z.rows(0, d).into_owned();
                let w = z.rows(d, z.len() - d).into_owned();
                first_order_map(&model, &sample, &kernel, &t, &w).unwrap()
            },
            &z,
            1e-6,
        );
        let exact = blocks.assemble();
        worst_fd = worst_fd.max((&exact - &fd).amax() / exact.amax().max(1.0));
    }
    let mut worst_schur = 0.0f64;
    for trial in 0..20 {
        let (d, k) = [(1, 2), (2, 3), (3, 5)][trial % 3];
        let dm = DMatrix::from_fn(d, k, |_, _| rng.random_range(-2.0..2.0));
        let b = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let v = &b * b.transpose() + DMatrix::identity(k, k) * 0.5;
        let g = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        let step = schur_update(&dm, &v, &g).map_err(|e| e.to_string())?;
        worst_schur = worst_schur.max((step - bordered_solve(&dm, &v, &g)).amax());
    }
    check(
        worst_fd <= 1e-5 && worst_schur <= 1e-9,
        format!("block relative error {worst_fd:.1e}, schur vs bordered {worst_schur:.1e}"),
    )
}

fn efficiency() -> Outcome {
    let t = Instant::now();
    let model = builtin_model("mean", &ModelParams::default()).unwrap();
    let gen = DataGenerator::Normal { mean: 0.0, variance: 1.0 };
    let design = MonteCarloDesign {
        n_grid: vec![200, 400],
        replications: 1000,
        seed: 7,
    };
    let report = monte_carlo(&gen, &model, &kernels(), &design, &SolverOptions::default(), 0).map_err(|e| e.to_string())?;
    within(t.elapsed(), 300.0)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for k in kernels() {
        let at200 = report.summary(k.name(), 200).ok_or("missing n = 200 summary")?;
        let at400 = report.summary(k.name(), 400).ok_or("missing n = 400 summary")?;
        let ratio = at200.variance_ratio[0];
        let cover = at400.coverage[0];
        ok &= (ratio - 1.0).abs() <= 0.15 && (cover - 0.95).abs() <= 0.025;
        parts.push(format!("{} var ratio {ratio:.3} coverage {cover:.3}", k.name()));
    }
    check(ok, parts.join("; "))
}

fn kernel_equivalence() -> Outcome {
    let t = Instant::now();
    let gen = DataGenerator::Normal { mean: 0.0, variance: 1.0 };
    let design = MonteCarloDesign {
        n_grid: vec![100, 400],
        replications: 500,
        seed: 8,
    };
    let report =
        monte_carlo(&gen, &mean_variance(), &kernels(), &design, &SolverOptions::default(), 0).map_err(|e| e.to_string())?;
    within(t.elapsed(), 600.0)?;
    let mut ok = true;
    let mut parts = Vec::new();
    let names = KernelName::ALL.map(|k| k.as_str());
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let small = report.pairwise_at(a, b, 100).ok_or("missing pair")?.median_scaled;
            let large = report.pairwise_at(a, b, 400).ok_or("missing pair")?.median_scaled;
            ok &= large <= 0.5 * small;
            parts.push(format!("{a}/{b} {small:.4} -> {large:.4}"));
        }
    }
    check(ok, format!("{} (excluded {} of {})", parts.join(", "), report.excluded, report.total))
}

fn shift_family() -> ApproxFamily {
    ApproxFamily::from_spec(
        mean_variance(),
        &PerturbationSpec::Shift {
            c: 1.0,
            direction: vec![1.0, 1.0],
        },
        Rate::Power { exponent: 1.0 },
    )
    .unwrap()
}

fn rate_slope() -> Outcome {
    let t = Instant::now();
    let design = RateDesign {
        n_grid: vec![400],
        m_grid: (2..=9).map(|p| 1u64 << p).collect(),
        schedules: vec![],
        schedule_n: vec![],
        replications: 200,
        seed: 9,
        allow_unbounded_curvature: false,
    };
    let gen = DataGenerator::Normal { mean: 0.0, variance: 1.0 };
    let cue = DivergenceKernel::builtin(KernelName::QuadraticCue);
    let report =
        rate_experiment(&shift_family(), &gen, &cue, &design, &SolverOptions::default(), 0).map_err(|e| e.to_string())?;
    within(t.elapsed(), 600.0)?;
    check(
        (report.slope + 1.0).abs() <= 0.15,
        format!("slope {:.3} (excluded {} of {})", report.slope, report.excluded, report.total),
    )
}

fn rate_regimes() -> Outcome {
    let t = Instant::now();
    let design = RateDesign {
        n_grid: vec![100],
        m_grid: vec![],
        schedules: vec![Schedule::Linear, Schedule::SqrtCeil],
        schedule_n: vec![100, 400, 1600],
        replications: 200,
        seed: 10,
        allow_unbounded_curvature: false,
    };
    let gen = DataGenerator::Normal { mean: 0.0, variance: 1.0 };
    let cue = DivergenceKernel::builtin(KernelName::QuadraticCue);
    let report =
        rate_experiment(&shift_family(), &gen, &cue, &design, &SolverOptions::default(), 0).map_err(|e| e.to_string())?;
    within(t.elapsed(), 900.0)?;
    let linear = report.equivalence.iter().find(|s| s.schedule == Schedule::Linear).ok_or("no linear schedule")?;
    let sqrt = report.equivalence.iter().find(|s| s.schedule == Schedule::SqrtCeil).ok_or("no sqrt schedule")?;
    let fmt = |s: &gelmem::approx::ScheduleResult| {
        s.points.iter().map(|p| format!("{:.4}", p.3)).collect::<Vec<_>>().join(", ")
    };
    // "no such decrease": the contrast keeps at least half its initial level
    check(
        linear.strictly_decreasing && sqrt.ratio >= 0.5,
        format!(
            "m = n: {} (ratio {:.3}); m = ceil(sqrt n): {} (ratio {:.3}, monotone {})",
            fmt(linear),
            linear.ratio,
            fmt(sqrt),
            sqrt.ratio,
            sqrt.strictly_decreasing
        ),
    )
}

const SIM: &str = r#"
seed = 11
[model]
name = "mean-variance"
sigma2 = 1.0
theta_lower = [-3.0]
theta_upper = [3.0]
[generator]
kind = "normal"
mean = 0.0
variance = 1.0
[simulate]
n_grid = [50, 100]
replications = 40
"#;

const ROBUST: &str = r#"
seed = 12
kernel = "quadratic-CUE"
[model]
name = "mean-variance"
sigma2 = 1.0
theta_lower = [-3.0]
theta_upper = [3.0]
[generator]
kind = "normal"
mean = 0.0
variance = 1.0
[robustness]
n_grid = [100]
m_grid = [4, 16, 64]
replications = 20
rate = { kind = "power", exponent = 1.0 }
perturbation = { kind = "shift", c = 1.0, direction = [1.0, 1.0] }
schedules = [{ kind = "linear" }, { kind = "sqrt-ceil" }]
schedule_n = [50, 100]
"#;

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for (cmd, text, file) in [("simulate", SIM, "simulate.csv"), ("robustness", ROBUST, "robustness.csv")] {
        let cfg = dir.path().join(format!("{cmd}.toml"));
        fs::write(&cfg, text).map_err(|e| e.to_string())?;
        let mut outputs = Vec::new();
        for (run, workers) in [(0, "1"), (1, "1"), (2, "4")] {
            let out = dir.path().join(format!("{cmd}-{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_gelmem"))
                .args([cmd, "--config", cfg.to_str().unwrap(), "--workers", workers, "--out", out.to_str().unwrap()])
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("{cmd} exited with {status}"));
            }
            outputs.push(fs::read(out.join(file)).map_err(|e| e.to_string())?);
        }
        if outputs[0] != outputs[1] || outputs[0] != outputs[2] {
            return Err(format!("{cmd}: CSV outputs differ"));
        }
        parts.push(format!("{cmd} {} bytes identical x3", outputs[0].len()));
    }
    Ok(parts.join(", "))
}

fn main() {
    let mut res = Residuals::default();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = f();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {id:>2} {tag} {name}: {detail}");
        results.push((id, name, outcome));
    };
    run(1, "conjugacy", &mut conjugacy);
    run(2, "just-identified invariance", &mut || just_identified(&mut res));
    run(3, "CUE oracle", &mut || oracle_equivalence(KernelName::QuadraticCue, cue_oracle, 30.0, &mut res));
    run(4, "EL oracle", &mut || oracle_equivalence(KernelName::ExponentialEl, el_oracle, 60.0, &mut res));
    run(5, "saddle residuals", &mut || saddle_residuals(&res));
    run(6, "Newton blocks", &mut newton_blocks_check);
    run(7, "efficiency Monte Carlo", &mut efficiency);
    run(8, "kernel equivalence", &mut kernel_equivalence);
    run(9, "approximation rate", &mut rate_slope);
    run(10, "equivalence regime", &mut rate_regimes);
    run(11, "determinism", &mut determinism);
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
