//! Run configuration: a flat JSON file, then command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use mlmcmc::estimator::{AllocationConstants, Rates};
use mlmcmc::hier::HierModelConfig;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 12345;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SimulateData,
    Rates,
    #[serde(alias = "assumptions")]
    CheckAssumptions,
    MseSweep,
    Estimate,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Experiment::SimulateData => "simulate-data",
            Experiment::Rates => "rates",
            Experiment::CheckAssumptions => "check-assumptions",
            Experiment::MseSweep => "mse-sweep",
            Experiment::Estimate => "estimate",
        };
        f.write_str(name)
    }
}

/// A validation failure tied to one configuration field.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn field_error(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,

    pub alpha0: f64,
    pub kappa0: f64,
    pub lambda: f64,
    pub m0: usize,
    pub max_level: usize,
    pub true_delta: f64,
    /// Existing `data.csv` to reuse instead of simulating.
    pub data: Option<PathBuf>,

    pub seed: u64,
    pub epsilon_grid: Vec<f64>,
    /// Accuracy target of the `estimate` experiment.
    pub epsilon: f64,
    pub replicates: usize,
    /// Deepest level of the rate regression and the assumption probes.
    pub levels: usize,
    pub sweeps_per_level: usize,
    pub reference_sweeps: usize,
    pub burn_in: usize,

    pub c_n: f64,
    pub c_b: f64,
    pub n_min: usize,
    pub beta: f64,
    pub bias_rate: f64,
    pub cost_rate: f64,

    pub contraction_pairs: usize,
    pub decay_points: usize,
    pub synthetic_rate: f64,

    pub out: PathBuf,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = HierModelConfig::default();
        let rates = Rates::default();
        let constants = AllocationConstants::default();
        Self {
            experiment: None,
            alpha0: model.alpha0,
            kappa0: model.kappa0,
            lambda: model.lambda,
            m0: model.m0,
            max_level: model.max_level,
            true_delta: 1.0,
            data: None,
            seed: DEFAULT_SEED,
            epsilon_grid: vec![0.04, 0.02, 0.01, 0.005],
            epsilon: 0.01,
            replicates: 50,
            levels: 6,
            sweeps_per_level: 10_000,
            reference_sweeps: 100_000,
            burn_in: 0,
            c_n: constants.c_n,
            c_b: constants.c_b,
            n_min: constants.n_min,
            beta: rates.beta,
            bias_rate: rates.bias_rate,
            cost_rate: rates.cost_rate,
            contraction_pairs: 200,
            decay_points: 100,
            synthetic_rate: 1.0,
            out: PathBuf::from("out"),
            threads: None,
        }
    }
}

/// Values given on the command line; each one replaces the file's value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epsilon_grid: Option<Vec<f64>>,
    pub replicates: Option<usize>,
    pub levels: Option<usize>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub data: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> anyhow::Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Self::from_json_str(&text).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.epsilon_grid {
            self.epsilon_grid = v;
        }
        if let Some(v) = o.replicates {
            self.replicates = v;
        }
        if let Some(v) = o.levels {
            self.levels = v;
        }
        if let Some(v) = o.out {
            self.out = v;
        }
        if let Some(v) = o.threads {
            self.threads = Some(v);
        }
        if let Some(v) = o.data {
            self.data = Some(v);
        }
    }

    pub fn model_config(&self) -> HierModelConfig {
        HierModelConfig {
            alpha0: self.alpha0,
            kappa0: self.kappa0,
            lambda: self.lambda,
            m0: self.m0,
            max_level: self.max_level,
        }
    }

    pub fn rates(&self) -> Rates {
        Rates {
            beta: self.beta,
            bias_rate: self.bias_rate,
            cost_rate: self.cost_rate,
        }
    }

    pub fn constants(&self) -> AllocationConstants {
        AllocationConstants {
            c_n: self.c_n,
            c_b: self.c_b,
            n_min: self.n_min,
        }
    }

    /// Check every field against its domain. Experiment-specific limits are
    /// only enforced for the experiment that uses them.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("alpha0", self.alpha0),
            ("kappa0", self.kappa0),
            ("lambda", self.lambda),
            ("true_delta", self.true_delta),
            ("epsilon", self.epsilon),
            ("c_n", self.c_n),
            ("c_b", self.c_b),
            ("beta", self.beta),
            ("bias_rate", self.bias_rate),
            ("cost_rate", self.cost_rate),
            ("synthetic_rate", self.synthetic_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(field_error(name, format!("must be positive and finite, got {v}")));
            }
        }
        if self.m0 == 0 {
            return Err(field_error("m0", "must be at least 1"));
        }
        if self.max_level > 20 {
            return Err(field_error("max_level", format!("{} is too deep (limit 20)", self.max_level)));
        }
        if self.n_min == 0 {
            return Err(field_error("n_min", "must be at least 1"));
        }
        if self.beta <= self.cost_rate {
            return Err(field_error("beta", "must exceed cost_rate"));
        }
        if self.epsilon_grid.is_empty() {
            return Err(field_error("epsilon_grid", "must not be empty"));
        }
        if let Some(e) = self.epsilon_grid.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return Err(field_error("epsilon_grid", format!("entries must be positive, got {e}")));
        }
        if self.threads == Some(0) {
            return Err(field_error("threads", "must be at least 1"));
        }
        if self.burn_in >= self.sweeps_per_level {
            return Err(field_error("burn_in", "must be below sweeps_per_level"));
        }
        if let Some(path) = &self.data {
            if !path.is_file() {
                return Err(field_error("data", format!("{} does not exist", path.display())));
            }
        }
        match self.experiment {
            Some(Experiment::Rates) | Some(Experiment::CheckAssumptions) => {
                if self.levels < 3 {
                    return Err(field_error("levels", "need at least 3 levels for a regression"));
                }
                if self.experiment == Some(Experiment::Rates) && self.levels + 1 > self.max_level {
                    return Err(field_error(
                        "levels",
                        format!("reference level {} exceeds max_level {}", self.levels + 1, self.max_level),
                    ));
                }
                if self.levels > self.max_level {
                    return Err(field_error("levels", format!("exceeds max_level {}", self.max_level)));
                }
                if self.contraction_pairs == 0 || self.decay_points == 0 {
                    return Err(field_error("contraction_pairs", "probe counts must be positive"));
                }
            }
            Some(Experiment::MseSweep) => {
                if self.replicates < 10 {
                    return Err(field_error("replicates", "need at least 10"));
                }
                if self.epsilon_grid.len() < 2 {
                    return Err(field_error("epsilon_grid", "need at least two values"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Parse a comma-separated list of floats, as given to `--epsilon-grid`.
pub fn parse_float_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

/// Load the optional config file, apply command-line overrides, validate.
pub fn parse_config(path: Option<&Path>, experiment: Option<Experiment>, overrides: Overrides) -> anyhow::Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if experiment.is_some() {
        config.experiment = experiment;
    }
    config.apply(overrides);
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_model_defaults() {
        let c = RunConfig::from_json_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.alpha0, c.kappa0, c.lambda, c.m0), (1.0, 0.1, 1000.0, 8));
        assert_eq!(RunConfig::from_json_str("").unwrap(), c);
    }

    #[test]
    fn negative_lambda_names_the_field() {
        let c = RunConfig::from_json_str(r#"{"lambda": -1}"#).unwrap();
        let err = c.validate().unwrap_err();
        assert_eq!(err.field, "lambda");
        assert!(err.to_string().contains("lambda"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json_str(r#"{"lamda": 3}"#).unwrap_err();
        assert!(err.to_string().contains("lamda"));
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 1, "replicates": 20, "m0": 4}"#).unwrap();
        let c = parse_config(
            Some(&path),
            Some(Experiment::MseSweep),
            Overrides {
                seed: Some(99),
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!(c.seed, 99);
        assert_eq!(c.replicates, 20);
        assert_eq!(c.m0, 4);
        assert_eq!(c.experiment, Some(Experiment::MseSweep));
    }

    #[test]
    fn experiment_specific_checks() {
        let mut c = RunConfig {
            experiment: Some(Experiment::MseSweep),
            replicates: 5,
            ..RunConfig::default()
        };
        assert_eq!(c.validate().unwrap_err().field, "replicates");
        c.experiment = Some(Experiment::Rates);
        c.levels = 2;
        assert_eq!(c.validate().unwrap_err().field, "levels");
        c.levels = 10;
        assert_eq!(c.validate().unwrap_err().field, "levels");
    }

    #[test]
    fn float_lists() {
        assert_eq!(parse_float_list("0.04, 0.02,0.01").unwrap(), vec![0.04, 0.02, 0.01]);
        assert!(parse_float_list("0.1,x").is_err());
    }

    #[test]
    fn experiment_names_round_trip() {
        let c = RunConfig::from_json_str(r#"{"experiment": "assumptions"}"#).unwrap();
        assert_eq!(c.experiment, Some(Experiment::CheckAssumptions));
        let c = RunConfig::from_json_str(r#"{"experiment": "mse-sweep"}"#).unwrap();
        assert_eq!(c.experiment.unwrap().to_string(), "mse-sweep");
    }
}
