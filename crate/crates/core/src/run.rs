//! Command drivers behind the `gelmem` binary: load and resolve a config,
//! run the computation, write the artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::approx::rate_experiment;
use crate::config::{Command, Overrides, RunConfig, VERSION};
use crate::error::{GelError, Result};
use crate::estimator::estimate;
use crate::harness::monte_carlo;
use crate::sample::read_csv;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_CONDITIONING: i32 = 3;
/// Non-convergence, failed consistency checks and aborted experiments.
pub const EXIT_NUMERICAL: i32 = 4;

pub fn exit_code(err: &GelError) -> i32 {
    match err {
        GelError::Config(_) | GelError::Data(_) | GelError::Evaluation { .. } | GelError::Io(_) => EXIT_CONFIG,
        GelError::InfeasibleAtTheta { .. } | GelError::GloballyInfeasible => EXIT_INFEASIBLE,
        GelError::Conditioning { .. } => EXIT_CONDITIONING,
        GelError::NotConverged(_) | GelError::Consistency(_) | GelError::TooManyExclusions { .. } => {
            EXIT_NUMERICAL
        }
    }
}

pub const DEFAULT_OUTPUT: &str = "gelmem-out";

#[derive(Serialize)]
struct Artifact<'a, T> {
    version: &'a str,
    config: serde_json::Value,
    report: &'a T,
}

fn io_err(path: &Path, e: std::io::Error) -> GelError {
    GelError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output.clone().unwrap_or_else(|| DEFAULT_OUTPUT.into());
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, cfg: &RunConfig, report: &T) -> Result<()> {
    let art = Artifact {
        version: VERSION,
        config: cfg.echo(),
        report,
    };
    let mut text = serde_json::to_string_pretty(&art).map_err(|e| GelError::Io(e.into()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// `#`-prefixed provenance lines for text and CSV artifacts.
fn preamble(cfg: &RunConfig) -> String {
    format!("# {VERSION}\n# config: {}\n", cfg.echo())
}

fn write_csv(
    path: &Path,
    cfg: &RunConfig,
    body: impl FnOnce(&mut Vec<u8>) -> Result<()>,
) -> Result<()> {
    let mut buf = preamble(cfg).into_bytes();
    body(&mut buf)?;
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Loads `config`, applies `flags` and resolves defaults.
pub fn prepare(command: Command, config: &Path, flags: &Overrides) -> Result<RunConfig> {
    RunConfig::load(config)?.resolve(command, flags)
}

/// Paths of the files a run wrote.
pub type Written = Vec<PathBuf>;

pub fn run_estimate(cfg: &RunConfig) -> Result<Written> {
    let model = cfg.model.build()?;
    let kernel = cfg.kernel()?;
    let data = cfg.data.as_ref().ok_or_else(|| GelError::Config("missing required key 'data.csv'".into()))?;
    let sample = read_csv(&data.csv, &data.csv_options())?;
    let report = estimate(&model, &sample, &kernel, &cfg.solver())?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let dir = output_dir(cfg)?;
    let json = dir.join("estimate.json");
    let txt = dir.join("estimate.txt");
    write_json(&json, cfg, &report)?;
    let mut text = preamble(cfg);
    text.push_str(&report.to_string());
    fs::write(&txt, text).map_err(|e| io_err(&txt, e))?;
    Ok(vec![json, txt])
}

pub fn run_simulate(cfg: &RunConfig) -> Result<Written> {
    let model = cfg.model.build()?;
    let gen = cfg
        .generator
        .as_ref()
        .ok_or_else(|| GelError::Config("missing required key 'generator'".into()))?;
    let design = cfg.monte_carlo_design()?;
    let report = monte_carlo(gen, &model, &cfg.kernels(), &design, &cfg.solver(), cfg.workers())?;
    let dir = output_dir(cfg)?;
    let json = dir.join("simulate.json");
    let csv = dir.join("simulate.csv");
    write_json(&json, cfg, &report)?;
    write_csv(&csv, cfg, |buf| report.write_csv(buf))?;
    Ok(vec![json, csv])
}

pub fn run_robustness(cfg: &RunConfig) -> Result<Written> {
    let family = cfg.family()?;
    let kernel = cfg.kernel()?;
    let gen = cfg
        .generator
        .as_ref()
        .ok_or_else(|| GelError::Config("missing required key 'generator'".into()))?;
    let design = cfg.rate_design()?;
    let report = rate_experiment(&family, gen, &kernel, &design, &cfg.solver(), cfg.workers())?;
    let dir = output_dir(cfg)?;
    let json = dir.join("robustness.json");
    let csv = dir.join("robustness.csv");
    write_json(&json, cfg, &report)?;
    write_csv(&csv, cfg, |buf| report.write_csv(buf))?;
    Ok(vec![json, csv])
}

/// Runs one command end to end and returns the process exit code, printing
/// errors to `err`.
pub fn main_with(command: Command, config: &Path, flags: &Overrides, mut err: impl Write) -> i32 {
    let result = prepare(command, config, flags).and_then(|cfg| match command {
        Command::Estimate => run_estimate(&cfg),
        Command::Simulate => run_simulate(&cfg),
        Command::Robustness => run_robustness(&cfg),
    });
    match result {
        Ok(files) => {
            for f in files {
                log::info!("wrote {}", f.display());
            }
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
