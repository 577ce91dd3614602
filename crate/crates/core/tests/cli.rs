use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use tempfile::TempDir;

fn gelmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gelmem"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const MEAN_SIM: &str = r#"
seed = 5
[model]
name = "mean"
[generator]
kind = "normal"
mean = 0.0
variance = 1.0
[simulate]
n_grid = [50]
replications = 10
"#;

const CUE_ROBUST: &str = r#"
seed = 3
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
replications = 6
rate = { kind = "power", exponent = 1.0 }
perturbation = { kind = "shift", c = 1.0, direction = [1.0, 1.0] }
"#;

#[test]
fn estimate_mean_of_three_points() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "x.csv", "1\n2\n3\n");
    let cfg = write(dir.path(), "c.toml", "kernel = \"exponential-EL\"\n[model]\nname = \"mean\"\n[data]\ncsv = \"x.csv\"\n");
    let out_dir = dir.path().join("out");
    let out = gelmem(&["estimate", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let json = read_json(&out_dir.join("estimate.json"));
    let theta = json["report"]["theta_hat"][0].as_f64().unwrap();
    assert!((theta - 2.0).abs() < 1e-10);
    assert!(json["version"].as_str().unwrap().starts_with("gelmem"));
    let txt = fs::read_to_string(out_dir.join("estimate.txt")).unwrap();
    assert!(txt.starts_with("# gelmem"));
}

#[test]
fn kernel_flag_overrides_file() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "x.csv", "x\n1\n2\n4\n");
    let cfg = write(dir.path(), "c.toml", "kernel = \"poisson-ET\"\n[model]\nname = \"mean\"\n");
    let out_dir = dir.path().join("out");
    let out = gelmem(&[
        "estimate",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--kernel",
        "quadratic-CUE",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let json = read_json(&out_dir.join("estimate.json"));
    assert_eq!(json["config"]["kernel"], "quadratic-CUE");
    assert!((json["report"]["theta_hat"][0].as_f64().unwrap() - 7.0 / 3.0).abs() < 1e-10);
}

#[test]
fn non_numeric_cell_reports_position() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "x.csv", "1\n2\nabc\n");
    let cfg = write(dir.path(), "c.toml", "kernel = \"quadratic-CUE\"\n[model]\nname = \"mean\"\n[data]\ncsv = \"x.csv\"\nheader = false\n");
    let out = gelmem(&["estimate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("row 3") && err.contains("column 1"), "{err}");
}

#[test]
fn globally_infeasible_sample_exits_two() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "x.csv", "1\n1.5\n2\n");
    let cfg = write(
        dir.path(),
        "c.toml",
        "kernel = \"exponential-EL\"\n[model]\nname = \"mean-variance\"\nsigma2 = 1.0\n[data]\ncsv = \"x.csv\"\n",
    );
    let out = gelmem(&["estimate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("globally infeasible"));
}

#[test]
fn missing_config_and_bad_flags_exit_one() {
    let out = gelmem(&["estimate", "--config", "/nonexistent/c.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let out = gelmem(&["simulate", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_writes_both_artifacts_quickly_and_reproducibly() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", MEAN_SIM);
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let t = Instant::now();
        let out = gelmem(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        assert!(t.elapsed().as_secs_f64() < 5.0);
        assert!(out_dir.join("simulate.json").exists());
        fs::read(out_dir.join("simulate.csv")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    // preamble, header, 10 replications × 3 kernels
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 31);
}

#[test]
fn seed_flag_changes_simulation() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", MEAN_SIM);
    let run = |name: &str, seed: &str| {
        let out_dir = dir.path().join(name);
        let out = gelmem(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        fs::read_to_string(out_dir.join("simulate.csv")).unwrap()
    };
    assert_ne!(run("a", "5"), run("b", "6"));
}

#[test]
fn zero_replications_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", &MEAN_SIM.replace("replications = 10", "replications = 0"));
    let out = gelmem(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("replications must be positive"));
}

#[test]
fn robustness_reports_slope() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", CUE_ROBUST);
    let out_dir = dir.path().join("out");
    let out = gelmem(&["robustness", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let json = read_json(&out_dir.join("robustness.json"));
    let slope = json["report"]["slope"].as_f64().unwrap();
    assert!(slope < -0.5, "slope {slope}");
    assert!(out_dir.join("robustness.csv").exists());
}

#[test]
fn unbounded_curvature_kernel_needs_override_and_warns() {
    let dir = TempDir::new().unwrap();
    let el = CUE_ROBUST.replace("quadratic-CUE", "exponential-EL");
    let cfg = write(dir.path(), "c.toml", &el);
    let out = gelmem(&["robustness", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = write(
        dir.path(),
        "c2.toml",
        &el.replace("[robustness]\n", "[robustness]\nallow_unbounded_curvature = true\n"),
    );
    let out_dir = dir.path().join("out");
    let out = gelmem(&["robustness", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("boundedness condition"));
}

#[test]
fn missing_rate_is_named() {
    let dir = TempDir::new().unwrap();
    let text = CUE_ROBUST.replace("rate = { kind = \"power\", exponent = 1.0 }\n", "");
    let cfg = write(dir.path(), "c.toml", &text);
    let out = gelmem(&["robustness", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("robustness.rate"));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let sim = write(dir.path(), "sim.toml", MEAN_SIM);
    let rob = write(dir.path(), "rob.toml", CUE_ROBUST);
    for (cmd, cfg, file) in [("simulate", &sim, "simulate.csv"), ("robustness", &rob, "robustness.csv")] {
        let outputs: Vec<Vec<u8>> = ["1", "4"]
            .iter()
            .map(|w| {
                let out_dir = dir.path().join(format!("{cmd}-{w}"));
                let out = gelmem(&[cmd, "--config", cfg.to_str().unwrap(), "--workers", w, "--out", out_dir.to_str().unwrap()]);
                assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
                fs::read(out_dir.join(file)).unwrap()
            })
            .collect();
        assert_eq!(outputs[0], outputs[1], "{cmd}");
    }
}
