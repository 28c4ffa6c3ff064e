//! Empirical rate estimates and assumption probes.
//!
//! * [`estimate_rates`]: variance and bias decay of the coupled increments,
//!   fitted by least squares on `log2 h_l`.
//! * [`check_contraction`]: a randomised lower bound on the mean-square
//!   contraction ratio of one kernel.
//! * [`check_coupling_decay`]: how far one step of neighbouring kernels from a
//!   common state drifts apart, level by level.
//! * [`mse_cost_sweep`]: cost against mean-square error for the multilevel
//!   estimator and the single-level baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupled::coupled_trajectory;
use crate::error::{Error, Result};
use crate::estimator::{
    allocate, ml_estimate, single_level_estimate, AllocationConstants, EstimatorKind, LevelAllocation, Rates,
};
use crate::kernel::{run_chain, InnovationRecord, IteratedMapKernel};
use crate::model::MultilevelModel;
use crate::rng::{derive_stream, RngStream, StreamPurpose, KEY_SCHEMA_VERSION};
use crate::stats::{batch_means, log2_fit, variance_estimate, MeanEstimate, OlsFit, DEFAULT_BATCHES};

/// Innovations averaged per state in the assumption probes.
pub const INNOVATIONS_PER_POINT: usize = 64;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    pub min_level: usize,
    /// Deepest level in the regression; the reference level is one deeper.
    pub max_level: usize,
    pub sweeps_per_level: usize,
    /// Length of the plain chain at the reference level.
    pub reference_sweeps: usize,
    pub burn_in: usize,
    pub replicate: u64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            min_level: 1,
            max_level: 6,
            sweeps_per_level: 10_000,
            reference_sweeps: 100_000,
            burn_in: 0,
            replicate: 0,
        }
    }
}

/// Long run at the reference level and its agreement with the model's
/// independent reference value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub level: usize,
    pub long_run: MeanEstimate,
    pub oracle: Option<f64>,
    /// `|long_run - oracle| / se`.
    pub z_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub level: usize,
    pub h: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub bias: f64,
    pub bias_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateManifest {
    pub model: String,
    pub master_seed: u64,
    pub key_schema_version: u32,
    pub config: RateConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    /// Mean increment of every simulated level, reference level included.
    pub increment_means: Vec<MeanEstimate>,
    /// Slope of `log2 var` on `log2 h`.
    pub variance_fit: OlsFit,
    /// Slope of `log2 |bias|` on `log2 h`.
    pub bias_fit: OlsFit,
    pub reference: ReferenceCheck,
    /// `|pi_l(phi) - pi_ref(phi)|` from the model's reference values.
    pub oracle_bias: Option<Vec<f64>>,
    pub total_cost: u64,
    pub manifest: RateManifest,
}

/// Variance and bias rates of the coupled increments over
/// `min_level..=max_level`.
///
/// The bias at level `l` is `|sum_{k=l+1}^{ref} mean increment_k|`, an
/// estimate of `pi_ref(phi) - pi_l(phi)` whose SE adds the level SEs in
/// quadrature. The reference level `max_level + 1` is also run as a plain
/// long chain and compared with the model's reference value.
pub fn estimate_rates<M: MultilevelModel>(model: &M, config: &RateConfig, master_seed: u64) -> Result<RateReport> {
    if config.min_level == 0 || config.max_level < config.min_level + 2 {
        return Err(Error::Config(format!(
            "rate regression needs levels 1 <= min <= max - 2, got {}..={}",
            config.min_level, config.max_level
        )));
    }
    let reference_level = config.max_level + 1;
    if reference_level > model.max_level() {
        return Err(Error::MaxLevelExceeded {
            max_level: model.max_level(),
        });
    }
    if config.burn_in >= config.sweeps_per_level {
        return Err(Error::Config("burn_in must be below sweeps_per_level".into()));
    }
    let levels: Vec<usize> = (config.min_level..=reference_level).collect();

    struct LevelRun {
        mean: MeanEstimate,
        variance: MeanEstimate,
        cost: u64,
    }

    let runs = levels
        .par_iter()
        .map(|&level| -> Result<LevelRun> {
            let fine = model.kernel(level)?;
            let coarse = model.kernel(level - 1)?;
            let mut stream = derive_stream(master_seed, StreamPurpose::LevelPair, level, config.replicate);
            let run = coupled_trajectory(
                &fine,
                &coarse,
                &model.initial_state(level),
                config.sweeps_per_level,
                &mut stream,
                |x| model.phi(x),
            )?;
            let values = &run.increment_values()[config.burn_in..];
            let variance = variance_estimate(values, DEFAULT_BATCHES)?;
            if variance.mean == 0.0 {
                let phis = &run.fine_phi[config.burn_in..];
                if phis.iter().any(|p| *p != phis[0]) {
                    return Err(Error::DegenerateCoupling { level });
                }
            }
            Ok(LevelRun {
                mean: batch_means(values, DEFAULT_BATCHES)?,
                variance,
                cost: run.cost,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (reference, reference_cost) = reference_run(model, reference_level, config, master_seed)?;

    let mut rows = Vec::new();
    for (i, &level) in levels.iter().enumerate().take(levels.len() - 1) {
        let tail = &runs[i + 1..];
        let bias = tail.iter().map(|r| r.mean.mean).sum::<f64>().abs();
        let bias_se = tail.iter().map(|r| r.mean.se * r.mean.se).sum::<f64>().sqrt();
        rows.push(RateRow {
            level,
            h: model.h(level),
            variance: runs[i].variance.mean,
            variance_se: runs[i].variance.se,
            bias,
            bias_se,
        });
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let variance_fit = log2_fit(&hs, &rows.iter().map(|r| r.variance).collect::<Vec<_>>())?;
    let bias_fit = log2_fit(&hs, &rows.iter().map(|r| r.bias).collect::<Vec<_>>())?;

    let oracle_bias = match reference.oracle {
        Some(top) => {
            let mut out = Vec::with_capacity(rows.len());
            for row in &rows {
                match model.reference_value(row.level) {
                    Some(v) => out.push((v? - top).abs()),
                    None => break,
                }
            }
            (out.len() == rows.len()).then_some(out)
        }
        None => None,
    };

    let total_cost = runs.iter().map(|r| r.cost).sum::<u64>() + reference_cost;
    Ok(RateReport {
        rows,
        increment_means: runs.iter().map(|r| r.mean).collect(),
        variance_fit,
        bias_fit,
        reference,
        oracle_bias,
        total_cost,
        manifest: RateManifest {
            model: model.id(),
            master_seed,
            key_schema_version: KEY_SCHEMA_VERSION,
            config: config.clone(),
        },
    })
}

fn reference_run<M: MultilevelModel>(
    model: &M,
    level: usize,
    config: &RateConfig,
    master_seed: u64,
) -> Result<(ReferenceCheck, u64)> {
    let kernel = model.kernel(level)?;
    let mut stream = derive_stream(master_seed, StreamPurpose::SingleLevel, level, config.replicate);
    let mut values = Vec::with_capacity(config.reference_sweeps);
    let (_, cost) = run_chain(&kernel, &model.initial_state(level), config.reference_sweeps, &mut stream, |x| {
        values.push(model.phi(x))
    })?;
    let burn = config.burn_in.min(values.len().saturating_sub(1));
    let long_run = batch_means(&values[burn..], DEFAULT_BATCHES)?;
    let oracle = model.reference_value(level).transpose()?;
    let z_score = oracle.map(|o| (long_run.mean - o).abs() / long_run.se);
    Ok((
        ReferenceCheck {
            level,
            long_run,
            oracle,
            z_score,
        },
        cost,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub level: usize,
    /// Largest per-pair ratio: a lower bound on the supremum.
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub pairs: usize,
    pub innovations_per_pair: usize,
}

/// Estimate `sup_{x,y} E_u |xi(x,u) - xi(y,u)|^2 / |x - y|^2` from `n_pairs`
/// random pairs drawn by `probe`, each averaged over 64 shared innovations.
/// Coincident pairs are redrawn.
pub fn check_contraction<K, P>(kernel: &K, mut probe: P, n_pairs: usize, stream: &mut RngStream) -> Result<ContractionEstimate>
where
    K: IteratedMapKernel + ?Sized,
    P: FnMut(&mut RngStream) -> Vec<f64>,
{
    if n_pairs == 0 {
        return Err(Error::Precondition("need at least one pair".into()));
    }
    let layout = kernel.innovation_layout();
    let mut ratios = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let mut attempts = 0;
        let (x, y, d0) = loop {
            let x = probe(stream);
            let y = probe(stream);
            let d0 = squared_distance(&x, &y);
            if d0 > 0.0 {
                break (x, y, d0);
            }
            attempts += 1;
            if attempts == 1000 {
                return Err(Error::Precondition("probe keeps returning coincident states".into()));
            }
        };
        let mut acc = 0.0;
        for _ in 0..INNOVATIONS_PER_POINT {
            let record = InnovationRecord::draw(layout, stream)?;
            acc += squared_distance(&kernel.apply(&x, &record.items)?, &kernel.apply(&y, &record.items)?) / d0;
        }
        ratios.push(acc / INNOVATIONS_PER_POINT as f64);
    }
    Ok(ContractionEstimate {
        level: kernel.level(),
        max_ratio: ratios.iter().cloned().fold(0.0, f64::max),
        mean_ratio: ratios.iter().sum::<f64>() / n_pairs as f64,
        pairs: n_pairs,
        innovations_per_pair: INNOVATIONS_PER_POINT,
    })
}

/// Contraction probe of `model`'s level kernel using its probe box.
pub fn model_contraction<M: MultilevelModel>(
    model: &M,
    level: usize,
    n_pairs: usize,
    master_seed: u64,
) -> Result<ContractionEstimate> {
    let kernel = model.kernel(level)?;
    let mut stream = derive_stream(master_seed, StreamPurpose::Probe, level, 0);
    check_contraction(&kernel, |s| model.probe_state(level, s), n_pairs, &mut stream)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingDecay {
    pub levels: Vec<usize>,
    pub h: Vec<f64>,
    /// `E_u |xi_l(x,u) - xi_{l-1}(x,u)|^2` on the coarse coordinates.
    pub mean_sq_distance: Vec<f64>,
    /// `None` when some distance is exactly zero and no slope exists.
    pub fit: Option<OlsFit>,
    pub points: usize,
}

impl CouplingDecay {
    pub fn degenerate(&self) -> bool {
        self.fit.is_none()
    }
}

/// One step of the level-`l` and level-`l-1` kernels from a common state:
/// a coarse probe state, zero-padded into the fine space. The squared
/// distance is measured after projecting the fine result back.
pub fn check_coupling_decay<M: MultilevelModel>(
    model: &M,
    levels: &[usize],
    n_points: usize,
    master_seed: u64,
) -> Result<CouplingDecay> {
    if levels.len() < 3 || levels.contains(&0) {
        return Err(Error::Config("coupling decay needs at least three levels, all >= 1".into()));
    }
    if n_points == 0 {
        return Err(Error::Precondition("need at least one probe point".into()));
    }
    let distances = levels
        .par_iter()
        .map(|&level| -> Result<f64> {
            let fine = model.kernel(level)?;
            let coarse = model.kernel(level - 1)?;
            let coarse_layout = coarse.innovation_layout();
            let mut stream = derive_stream(master_seed, StreamPurpose::Probe, level, 1);
            let mut acc = 0.0;
            for _ in 0..n_points {
                let xc = model.probe_state(level - 1, &mut stream);
                let xf = fine.embed(&xc);
                for _ in 0..INNOVATIONS_PER_POINT {
                    let record = InnovationRecord::draw(fine.innovation_layout(), &mut stream)?;
                    let f = fine.apply(&xf, &record.items)?;
                    let c = coarse.apply(&xc, &record.restrict(coarse_layout)?)?;
                    acc += squared_distance(&coarse.project(&f), &c);
                }
            }
            Ok(acc / (n_points * INNOVATIONS_PER_POINT) as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let h: Vec<f64> = levels.iter().map(|&l| model.h(l)).collect();
    let fit = if distances.iter().all(|d| *d > 0.0) {
        Some(log2_fit(&h, &distances)?)
    } else {
        None
    };
    Ok(CouplingDecay {
        levels: levels.to_vec(),
        h,
        mean_sq_distance: distances,
        fit,
        points: n_points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseSweepConfig {
    pub epsilons: Vec<f64>,
    pub replicates: usize,
    pub rates: Rates,
    pub constants: AllocationConstants,
    pub burn_in: usize,
    /// Give every replicate the same seed, so the spread collapses to zero.
    pub force_identical_seeds: bool,
}

impl Default for MseSweepConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.04, 0.02, 0.01, 0.005],
            replicates: 50,
            rates: Rates::default(),
            constants: AllocationConstants::default(),
            burn_in: 0,
            force_identical_seeds: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseCostRow {
    pub epsilon: f64,
    pub method: EstimatorKind,
    pub mse: f64,
    /// Mean scalar-draw cost per replicate.
    pub cost: f64,
    pub replicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseCostReport {
    pub rows: Vec<MseCostRow>,
    pub allocations: Vec<LevelAllocation>,
    /// Single-level chain lengths, one per epsilon.
    pub single_level_samples: Vec<usize>,
    pub truth_level: usize,
    pub truth: f64,
    /// Slope of `log2 cost` on `log2 mse`, multilevel.
    pub ml_fit: OlsFit,
    pub single_fit: OlsFit,
    pub master_seed: u64,
    pub config: MseSweepConfig,
}

impl MseCostReport {
    pub fn rows_for(&self, method: EstimatorKind) -> impl Iterator<Item = &MseCostRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

/// For every epsilon: `R` multilevel estimates with the allocation for
/// epsilon, and `R` single-level runs at the allocation's finest level with
/// `N_0` steps (the `epsilon^-2` sample size of a level-0 chain). MSE is
/// taken against the model's reference value at the deepest level used.
///
/// Replicate `r` runs under one master seed, drawn from the replicate-root
/// stream, at every epsilon, so the grid points share random numbers.
pub fn mse_cost_sweep<M: MultilevelModel>(model: &M, config: &MseSweepConfig, master_seed: u64) -> Result<MseCostReport> {
    if config.replicates < 10 {
        return Err(Error::Config(format!("need at least 10 replicates, got {}", config.replicates)));
    }
    if config.epsilons.len() < 2 {
        return Err(Error::Config("epsilon grid needs at least two values".into()));
    }
    let h = model.h_schedule();
    let allocations = config
        .epsilons
        .iter()
        .map(|&eps| allocate(eps, config.rates, &h, config.constants))
        .collect::<Result<Vec<_>>>()?;
    let truth_level = allocations.iter().map(|a| a.finest_level).max().unwrap_or(0);
    let truth = model
        .reference_value(truth_level)
        .ok_or_else(|| Error::Config(format!("model {} has no reference value", model.id())))??;
    let single_level_samples: Vec<usize> = allocations.iter().map(|a| a.samples[0]).collect();

    let tasks: Vec<(usize, EstimatorKind, usize)> = (0..config.epsilons.len())
        .flat_map(|i| {
            [EstimatorKind::MultiLevel, EstimatorKind::SingleLevel]
                .into_iter()
                .flat_map(move |kind| (0..config.replicates).map(move |r| (i, kind, r)))
        })
        .collect();
    let results = tasks
        .par_iter()
        .map(|&(i, kind, r)| -> Result<(f64, u64)> {
            let r_key = if config.force_identical_seeds { 0 } else { r as u64 };
            let seed = derive_stream(master_seed, StreamPurpose::ReplicateRoot, 0, r_key).next_u64();
            let est = match kind {
                EstimatorKind::MultiLevel => ml_estimate(model, &allocations[i], seed, 0, config.burn_in)?,
                EstimatorKind::SingleLevel => single_level_estimate(
                    model,
                    allocations[i].finest_level,
                    single_level_samples[i],
                    seed,
                    0,
                    config.burn_in,
                )?,
            };
            Ok((est.value, est.total_cost))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (chunk, &(i, kind, _)) in results.chunks(config.replicates).zip(tasks.iter().step_by(config.replicates)) {
        let n = chunk.len() as f64;
        rows.push(MseCostRow {
            epsilon: config.epsilons[i],
            method: kind,
            mse: chunk.iter().map(|(v, _)| (v - truth) * (v - truth)).sum::<f64>() / n,
            cost: chunk.iter().map(|(_, c)| *c as f64).sum::<f64>() / n,
            replicates: chunk.len(),
        });
    }
    let fit = |kind: EstimatorKind| -> Result<OlsFit> {
        let (mse, cost): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.method == kind)
            .map(|r| (r.mse, r.cost))
            .unzip();
        log2_fit(&mse, &cost)
    };
    Ok(MseCostReport {
        ml_fit: fit(EstimatorKind::MultiLevel)?,
        single_fit: fit(EstimatorKind::SingleLevel)?,
        rows,
        allocations,
        single_level_samples,
        truth_level,
        truth,
        master_seed,
        config: config.clone(),
    })
}
