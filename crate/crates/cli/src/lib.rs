//! Batch experiment runner for the multilevel MCMC library.
//!
//! Every run writes its CSV outputs and a `manifest.json` into the output
//! directory. CSVs are deterministic given the config; the manifest also
//! records wall time.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mlmcmc::diagnostics::{
    check_coupling_decay, estimate_rates, model_contraction, mse_cost_sweep, MseSweepConfig, RateConfig,
};
use mlmcmc::estimator::{allocate, ml_estimate, EstimatorKind};
use mlmcmc::hier::{simulate_data, HierGaussModel};
use mlmcmc::kernel::SyntheticModel;
use mlmcmc::rng::{derive_stream, StreamPurpose, KEY_SCHEMA_VERSION};
use mlmcmc::MultilevelModel;
use serde::Serialize;
use serde_json::json;

pub mod config;

pub use config::{parse_config, parse_float_list, ConfigError, Experiment, Overrides, RunConfig, DEFAULT_SEED};

pub const DATA_FILE: &str = "data.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Fixed-precision float text: 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataProvenance {
    /// `simulated` or `file`.
    pub source: String,
    pub path: Option<PathBuf>,
    pub seed: u64,
    pub true_delta: f64,
    pub observations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub experiment: Experiment,
    pub version: String,
    pub key_schema_version: u32,
    pub config: RunConfig,
    pub data: DataProvenance,
    pub outputs: Vec<String>,
    pub derived: serde_json::Value,
    pub total_cost: Option<u64>,
    pub wall_time_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub manifest: Manifest,
}

struct CsvOut {
    writer: csv::Writer<File>,
    path: PathBuf,
}

impl CsvOut {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self> {
        let path = dir.join(name);
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(file);
        writer.write_record(header)?;
        Ok(Self { writer, path })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.writer
            .write_record(fields)
            .with_context(|| format!("cannot write {}", self.path.display()))
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.writer
            .flush()
            .with_context(|| format!("cannot write {}", self.path.display()))?;
        Ok(self.path)
    }
}

/// Read a `data.csv` written by `simulate-data` (columns `index,y`, index
/// starting at 1).
pub fn read_data(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut y = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("malformed row in {}", path.display()))?;
        let index: usize = record.get(0).unwrap_or("").trim().parse().with_context(|| {
            format!("{}: row {} has a bad index", path.display(), i + 1)
        })?;
        if index != i + 1 {
            bail!("{}: expected index {} but found {index}", path.display(), i + 1);
        }
        let value: f64 = record
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .with_context(|| format!("{}: row {} has a bad value", path.display(), i + 1))?;
        y.push(value);
    }
    Ok(y)
}

fn write_data(dir: &Path, y: &[f64]) -> Result<PathBuf> {
    let mut out = CsvOut::create(dir, DATA_FILE, &["index", "y"])?;
    for (j, v) in y.iter().enumerate() {
        out.row(&[(j + 1).to_string(), fmt_float(*v)])?;
    }
    out.finish()
}

/// The configured dataset: read from `data` when given, else simulated from
/// the master seed.
pub fn dataset(config: &RunConfig) -> Result<(Vec<f64>, DataProvenance)> {
    match &config.data {
        Some(path) => {
            let y = read_data(path)?;
            Ok((
                y.clone(),
                DataProvenance {
                    source: "file".into(),
                    path: Some(path.clone()),
                    seed: config.seed,
                    true_delta: config.true_delta,
                    observations: y.len(),
                },
            ))
        }
        None => {
            let k = config.model_config().k(config.max_level);
            let mut stream = derive_stream(config.seed, StreamPurpose::Data, 0, 0);
            let y = simulate_data(config.lambda, config.true_delta, k, &mut stream)?;
            Ok((
                y,
                DataProvenance {
                    source: "simulated".into(),
                    path: None,
                    seed: config.seed,
                    true_delta: config.true_delta,
                    observations: k,
                },
            ))
        }
    }
}

struct Outcome {
    files: Vec<PathBuf>,
    derived: serde_json::Value,
    total_cost: Option<u64>,
}

/// Run the configured experiment and write its artifacts.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let experiment = config
        .experiment
        .context("no experiment selected")?;
    let started = Instant::now();
    std::fs::create_dir_all(&config.out)
        .with_context(|| format!("cannot create output directory {}", config.out.display()))?;

    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let (y, provenance) = dataset(config)?;

    let outcome = pool.install(|| dispatch(experiment, config, &y))?;
    let mut files = outcome.files;
    let manifest = Manifest {
        experiment,
        version: env!("CARGO_PKG_VERSION").to_string(),
        key_schema_version: KEY_SCHEMA_VERSION,
        config: config.clone(),
        data: provenance,
        outputs: files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        derived: outcome.derived,
        total_cost: outcome.total_cost,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    let manifest_path = config.out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&manifest_path, text).with_context(|| format!("cannot write {}", manifest_path.display()))?;
    files.push(manifest_path);
    Ok(RunSummary {
        out_dir: config.out.clone(),
        files,
        manifest,
    })
}

fn dispatch(experiment: Experiment, config: &RunConfig, y: &[f64]) -> Result<Outcome> {
    let dir = config.out.as_path();
    let mut files = Vec::new();
    if config.data.is_none() {
        files.push(write_data(dir, y)?);
    }
    if experiment == Experiment::SimulateData {
        return Ok(Outcome {
            files,
            derived: json!({ "observations": y.len() }),
            total_cost: Some(2 * y.len() as u64),
        });
    }
    let model = HierGaussModel::new(config.model_config(), y.to_vec())?;
    let outcome = match experiment {
        Experiment::SimulateData => unreachable!(),
        Experiment::Rates => run_rates(config, &model, dir)?,
        Experiment::CheckAssumptions => run_assumptions(config, &model, dir)?,
        Experiment::MseSweep => run_mse_sweep(config, &model, dir)?,
        Experiment::Estimate => run_estimate(config, &model, dir)?,
    };
    files.extend(outcome.files);
    Ok(Outcome { files, ..outcome })
}

fn run_rates(config: &RunConfig, model: &HierGaussModel, dir: &Path) -> Result<Outcome> {
    let rate_config = RateConfig {
        min_level: 1,
        max_level: config.levels,
        sweeps_per_level: config.sweeps_per_level,
        reference_sweeps: config.reference_sweeps,
        burn_in: config.burn_in,
        replicate: 0,
    };
    let report = estimate_rates(model, &rate_config, config.seed)?;
    let mut out = CsvOut::create(dir, "rates.csv", &["level", "h_l", "var", "var_se", "bias", "bias_se"])?;
    for r in &report.rows {
        out.row(&[
            r.level.to_string(),
            fmt_float(r.h),
            fmt_float(r.variance),
            fmt_float(r.variance_se),
            fmt_float(r.bias),
            fmt_float(r.bias_se),
        ])?;
    }
    let path = out.finish()?;
    Ok(Outcome {
        files: vec![path],
        derived: json!({
            "beta_hat": report.variance_fit.slope,
            "beta_r_squared": report.variance_fit.r_squared,
            "bias_rho_hat": report.bias_fit.slope,
            "bias_rho_r_squared": report.bias_fit.r_squared,
            "mixing_rho": null,
            "reference": report.reference,
            "oracle_bias": report.oracle_bias,
            "increment_means": report.increment_means,
            "rates_manifest": report.manifest,
        }),
        total_cost: Some(report.total_cost),
    })
}

fn run_assumptions(config: &RunConfig, model: &HierGaussModel, dir: &Path) -> Result<Outcome> {
    let levels: Vec<usize> = (1..=config.levels).collect();
    let contraction = levels
        .iter()
        .map(|&l| model_contraction(model, l, config.contraction_pairs, config.seed))
        .collect::<mlmcmc::Result<Vec<_>>>()?;
    let decay = check_coupling_decay(model, &levels, config.decay_points, config.seed)?;
    let synthetic = SyntheticModel {
        rate: config.synthetic_rate,
        max_level: config.levels,
    };
    let synthetic_decay = check_coupling_decay(&synthetic, &levels, 10 * config.decay_points, config.seed)?;

    let mut out = CsvOut::create(dir, "assumptions.csv", &["level", "tau_hat", "a5_dist"])?;
    for (i, &l) in levels.iter().enumerate() {
        out.row(&[
            l.to_string(),
            fmt_float(contraction[i].max_ratio),
            fmt_float(decay.mean_sq_distance[i]),
        ])?;
    }
    let path = out.finish()?;
    let tau_max = contraction.iter().map(|c| c.max_ratio).fold(0.0, f64::max);
    Ok(Outcome {
        files: vec![path],
        derived: json!({
            "tau_hat_max": tau_max,
            "tau_hat_is_lower_bound": true,
            "contraction": contraction,
            "a5_slope": decay.fit.map(|f| f.slope),
            "a5_r_squared": decay.fit.map(|f| f.r_squared),
            "a5_degenerate": decay.degenerate(),
            "synthetic_mh_slope": synthetic_decay.fit.map(|f| f.slope),
            "synthetic_mh_distances": synthetic_decay.mean_sq_distance,
            "probe_points": config.decay_points,
        }),
        total_cost: None,
    })
}

fn run_mse_sweep(config: &RunConfig, model: &HierGaussModel, dir: &Path) -> Result<Outcome> {
    let sweep = MseSweepConfig {
        epsilons: config.epsilon_grid.clone(),
        replicates: config.replicates,
        rates: config.rates(),
        constants: config.constants(),
        burn_in: 0,
        force_identical_seeds: false,
    };
    let report = mse_cost_sweep(model, &sweep, config.seed)?;
    let mut out = CsvOut::create(dir, "mse_cost.csv", &["epsilon", "method", "mse", "cost", "replicates"])?;
    for r in &report.rows {
        let method = match r.method {
            EstimatorKind::MultiLevel => "mlmcmc",
            EstimatorKind::SingleLevel => "single-level",
        };
        out.row(&[
            fmt_float(r.epsilon),
            method.to_string(),
            fmt_float(r.mse),
            fmt_float(r.cost),
            r.replicates.to_string(),
        ])?;
    }
    let path = out.finish()?;
    let total: f64 = report.rows.iter().map(|r| r.cost * r.replicates as f64).sum();
    Ok(Outcome {
        files: vec![path],
        derived: json!({
            "ml_slope": report.ml_fit.slope,
            "single_level_slope": report.single_fit.slope,
            "slope_gap": report.single_fit.slope.abs() - report.ml_fit.slope.abs(),
            "truth": report.truth,
            "truth_level": report.truth_level,
            "allocations": report.allocations,
            "single_level_samples": report.single_level_samples,
        }),
        total_cost: Some(total.round() as u64),
    })
}

fn run_estimate(config: &RunConfig, model: &HierGaussModel, dir: &Path) -> Result<Outcome> {
    let allocation = allocate(config.epsilon, config.rates(), &model.h_schedule(), config.constants())?;
    let est = ml_estimate(model, &allocation, config.seed, 0, config.burn_in)?;
    let oracle = model.posterior_oracle(allocation.finest_level)?;
    let mut out = CsvOut::create(dir, "estimate.csv", &["level", "samples", "mean", "se", "cost"])?;
    for (l, n) in allocation.samples.iter().enumerate() {
        out.row(&[
            l.to_string(),
            n.to_string(),
            fmt_float(est.per_level_means[l]),
            fmt_float(est.per_level_ses[l]),
            est.per_level_costs[l].to_string(),
        ])?;
    }
    let path = out.finish()?;
    Ok(Outcome {
        files: vec![path],
        derived: json!({
            "value": est.value,
            "combined_se": est.combined_se(),
            "oracle": oracle,
            "allocation": allocation,
            "estimate_manifest": est.manifest,
        }),
        total_cost: Some(est.total_cost),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(experiment: Experiment, out: &Path) -> RunConfig {
        RunConfig {
            experiment: Some(experiment),
            max_level: 5,
            levels: 4,
            sweeps_per_level: 500,
            reference_sweeps: 1000,
            replicates: 10,
            contraction_pairs: 10,
            decay_points: 5,
            out: out.to_path_buf(),
            threads: Some(2),
            ..RunConfig::default()
        }
    }

    #[test]
    fn simulate_data_is_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run(&small(Experiment::SimulateData, a.path())).unwrap();
        run(&small(Experiment::SimulateData, b.path())).unwrap();
        let da = std::fs::read(a.path().join(DATA_FILE)).unwrap();
        assert_eq!(da, std::fs::read(b.path().join(DATA_FILE)).unwrap());
        assert_eq!(read_data(&a.path().join(DATA_FILE)).unwrap().len(), 8 << 5);
        let text = String::from_utf8(da).unwrap();
        assert!(text.starts_with("index,y\n1,"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn data_written_at_full_precision_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let summary = run(&small(Experiment::SimulateData, dir.path())).unwrap();
        let cfg = small(Experiment::SimulateData, dir.path());
        let (y, _) = dataset(&cfg).unwrap();
        assert_eq!(read_data(&dir.path().join(DATA_FILE)).unwrap(), y);
        assert_eq!(summary.manifest.data.observations, y.len());
    }

    #[test]
    fn reused_data_is_not_rewritten() {
        let a = tempfile::tempdir().unwrap();
        run(&small(Experiment::SimulateData, a.path())).unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            data: Some(a.path().join(DATA_FILE)),
            epsilon: 0.02,
            ..small(Experiment::Estimate, b.path())
        };
        let summary = run(&cfg).unwrap();
        assert!(!b.path().join(DATA_FILE).exists());
        assert_eq!(summary.manifest.data.source, "file");
        assert!(b.path().join("estimate.csv").exists());
    }

    #[test]
    fn output_directory_is_created() {
        let dir = tempfile::tempdir().unwrap();
        let nested = dir.path().join("a/b/c");
        run(&small(Experiment::SimulateData, &nested)).unwrap();
        assert!(nested.join(MANIFEST_FILE).exists());
    }

    #[test]
    fn unwritable_output_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let target = blocker.join("sub");
        let err = run(&small(Experiment::SimulateData, &target)).unwrap_err();
        assert!(format!("{err:#}").contains(&target.display().to_string()));
    }

    #[test]
    fn rates_writes_one_row_per_level() {
        let dir = tempfile::tempdir().unwrap();
        let summary = run(&small(Experiment::Rates, dir.path())).unwrap();
        let text = std::fs::read_to_string(dir.path().join("rates.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 4);
        assert_eq!(text.lines().next().unwrap(), "level,h_l,var,var_se,bias,bias_se");
        assert!(summary.manifest.derived["beta_hat"].is_f64());
    }

    #[test]
    fn assumption_and_sweep_outputs() {
        let dir = tempfile::tempdir().unwrap();
        run(&small(Experiment::CheckAssumptions, dir.path())).unwrap();
        let text = std::fs::read_to_string(dir.path().join("assumptions.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 4);
        let dir = tempfile::tempdir().unwrap();
        let summary = run(&RunConfig {
            epsilon_grid: vec![0.04, 0.02],
            ..small(Experiment::MseSweep, dir.path())
        })
        .unwrap();
        let text = std::fs::read_to_string(dir.path().join("mse_cost.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 4);
        assert!(summary.manifest.outputs.contains(&"mse_cost.csv".to_string()));
    }

    #[test]
    fn floats_have_seventeen_significant_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(1.0).parse::<f64>().unwrap(), 1.0);
    }
}
