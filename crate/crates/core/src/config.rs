//! Run configuration files (TOML, or JSON by extension).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::approx::{ApproxFamily, PerturbationSpec, Rate, RateDesign, Schedule};
use crate::error::{GelError, Result};
use crate::harness::{DataGenerator, MonteCarloDesign};
use crate::kernel::{DivergenceKernel, KernelName};
use crate::model::{builtin_model, MomentModel, ModelParams};
use crate::sample::{ColumnRef, CsvOptions};
use crate::solver::SolverOptions;

pub const VERSION: &str = concat!("gelmem ", env!("CARGO_PKG_VERSION"));

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Estimate,
    Simulate,
    Robustness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_upper: Option<Vec<f64>>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<MomentModel> {
        builtin_model(
            &self.name,
            &ModelParams {
                sigma2: self.sigma2,
                d: self.d,
                k: self.k,
                theta_lower: self.theta_lower.clone(),
                theta_upper: self.theta_upper.clone(),
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub csv: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<ColumnRef>,
}

impl DataSpec {
    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            header: self.header,
            columns: self.columns.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub n_grid: Vec<usize>,
    pub replications: usize,
    /// Kernels to compare; all built-ins when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernels: Option<Vec<KernelName>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSpec {
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<u64>,
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<Rate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default)]
    pub schedules: Vec<Schedule>,
    #[serde(default)]
    pub schedule_n: Vec<usize>,
    #[serde(default)]
    pub allow_unbounded_curvature: bool,
}

/// A complete run description. Every section not needed by the command is
/// optional; `workers` and `output` only affect where and how fast the run
/// happens and are left out of the echoed config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<DataGenerator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness: Option<RobustnessSpec>,
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub kernel: Option<String>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

fn missing(key: &str) -> GelError {
    GelError::Config(format!("missing required key '{key}'"))
}

impl RunConfig {
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            serde_json::from_str(text).map_err(|e| GelError::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| GelError::Config(e.to_string()))
        }
    }

    /// Reads a config file; `.json` files are parsed as JSON, anything else
    /// as TOML. Relative data paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GelError::Config(format!("cannot read {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = Self::parse(&text, json)
            .map_err(|e| GelError::Config(format!("{}: {e}", path.display())))?;
        if let (Some(data), Some(dir)) = (cfg.data.as_mut(), path.parent()) {
            if data.csv.is_relative() {
                data.csv = dir.join(&data.csv);
            }
        }
        Ok(cfg)
    }

    /// Applies flag overrides and fills defaults, then validates everything
    /// `command` needs.
    pub fn resolve(mut self, command: Command, flags: &Overrides) -> Result<Self> {
        if let Some(c) = self.command {
            if c != command {
                return Err(GelError::Config(format!(
                    "config is for command '{c:?}' but '{command:?}' was requested"
                )));
            }
        }
        self.command = Some(command);
        if let Some(k) = &flags.kernel {
            self.kernel = Some(k.parse()?);
        }
        if let Some(p) = &flags.data {
            match self.data.as_mut() {
                Some(d) => d.csv = p.clone(),
                None => {
                    self.data = Some(DataSpec {
                        csv: p.clone(),
                        header: None,
                        columns: Vec::new(),
                    })
                }
            }
        }
        if flags.seed.is_some() {
            self.seed = flags.seed;
        }
        if flags.output.is_some() {
            self.output = flags.output.clone();
        }
        if flags.workers.is_some() {
            self.workers = flags.workers;
        }
        self.seed.get_or_insert(DEFAULT_SEED);
        self.solver.get_or_insert_with(SolverOptions::default);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        self.model.build()?;
        self.solver().validate()?;
        match self.command {
            Some(Command::Estimate) => {
                self.kernel.ok_or_else(|| missing("kernel"))?;
                self.data.as_ref().ok_or_else(|| missing("data.csv"))?;
            }
            Some(Command::Simulate) => {
                self.generator.as_ref().ok_or_else(|| missing("generator"))?;
                self.monte_carlo_design()?.validate()?;
            }
            Some(Command::Robustness) => {
                self.kernel.ok_or_else(|| missing("kernel"))?;
                self.generator.as_ref().ok_or_else(|| missing("generator"))?;
                self.rate_design()?.validate()?;
                self.family()?;
            }
            None => {}
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverOptions {
        self.solver.clone().unwrap_or_default()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    /// 0 lets the pool use every available core.
    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(0)
    }

    pub fn kernel(&self) -> Result<DivergenceKernel> {
        Ok(DivergenceKernel::builtin(self.kernel.ok_or_else(|| missing("kernel"))?))
    }

    pub fn kernels(&self) -> Vec<DivergenceKernel> {
        let names = self
            .simulate
            .as_ref()
            .and_then(|s| s.kernels.clone())
            .or_else(|| self.kernel.map(|k| vec![k]))
            .unwrap_or_else(|| KernelName::ALL.to_vec());
        names.into_iter().map(DivergenceKernel::builtin).collect()
    }

    pub fn monte_carlo_design(&self) -> Result<MonteCarloDesign> {
        let s = self.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
        Ok(MonteCarloDesign {
            n_grid: s.n_grid.clone(),
            replications: s.replications,
            seed: self.seed(),
        })
    }

    pub fn rate_design(&self) -> Result<RateDesign> {
        let r = self.robustness.as_ref().ok_or_else(|| missing("robustness"))?;
        Ok(RateDesign {
            n_grid: r.n_grid.clone(),
            m_grid: r.m_grid.clone(),
            schedules: r.schedules.clone(),
            schedule_n: r.schedule_n.clone(),
            replications: r.replications,
            seed: self.seed(),
            allow_unbounded_curvature: r.allow_unbounded_curvature,
        })
    }

    pub fn family(&self) -> Result<ApproxFamily> {
        let r = self.robustness.as_ref().ok_or_else(|| missing("robustness"))?;
        let rate = r.rate.ok_or_else(|| missing("robustness.rate"))?;
        let pert = r
            .perturbation
            .as_ref()
            .ok_or_else(|| missing("robustness.perturbation"))?;
        ApproxFamily::from_spec(self.model.build()?, pert, rate)
    }

    /// The config as echoed into outputs: defaults filled, run-location
    /// fields dropped.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIM: &str = r#"
seed = 9
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

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse("bogus = 1\n[model]\nname = \"mean\"\n", false).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = RunConfig::parse("[model]\nname = \"mean\"\nsigma = 2\n", false).unwrap_err();
        assert!(err.to_string().contains("sigma"));
    }

    #[test]
    fn flags_override_file() {
        let cfg = RunConfig::parse(SIM, false).unwrap();
        let flags = Overrides {
            seed: Some(77),
            workers: Some(2),
            ..Default::default()
        };
        let r = cfg.resolve(Command::Simulate, &flags).unwrap();
        assert_eq!(r.seed(), 77);
        assert_eq!(r.workers(), 2);
        assert_eq!(r.solver, Some(SolverOptions::default()));
    }

    #[test]
    fn echo_round_trips_without_location_fields() {
        let mut cfg = RunConfig::parse(SIM, false).unwrap();
        cfg.output = Some("somewhere".into());
        let r = cfg.resolve(Command::Simulate, &Overrides::default()).unwrap();
        let echo = r.echo();
        assert!(echo.get("output").is_none() && echo.get("workers").is_none());
        let back: RunConfig = serde_json::from_value(echo).unwrap();
        let mut expect = r.clone();
        expect.output = None;
        assert_eq!(back, expect);
    }

    #[test]
    fn zero_replications_rejected() {
        let cfg = RunConfig::parse(&SIM.replace("replications = 10", "replications = 0"), false).unwrap();
        let err = cfg.resolve(Command::Simulate, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("replications must be positive"));
    }

    #[test]
    fn missing_rate_is_named() {
        let text = r#"
kernel = "quadratic-CUE"
[model]
name = "mean"
[generator]
kind = "normal"
mean = 0.0
variance = 1.0
[robustness]
n_grid = [50]
m_grid = [2, 4]
replications = 3
perturbation = { kind = "shift", c = 1.0, direction = [1.0] }
"#;
        let err = RunConfig::parse(text, false)
            .unwrap()
            .resolve(Command::Robustness, &Overrides::default())
            .unwrap_err();
        assert!(err.to_string().contains("robustness.rate"), "{err}");
    }

    #[test]
    fn command_mismatch_rejected() {
        let text = format!("command = \"estimate\"\n{SIM}");
        let cfg = RunConfig::parse(&text, false).unwrap();
        assert!(cfg.resolve(Command::Simulate, &Overrides::default()).is_err());
    }
}
