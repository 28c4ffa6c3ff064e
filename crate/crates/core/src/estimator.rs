//! The telescoping multilevel estimator, its sample allocation, and the
//! single-level baseline.
//!
//! ```text
//! pi_L(phi) ≈ (1/N_0) sum phi(X_n(0)) + sum_{l=1}^L (1/N_l) sum [phi(Xbar_n(l)) - phi(X_n(l))]
//! ```
//!
//! Level 0 is one chain of the level-0 kernel; each increment term is an
//! independent coupled chain with its own stream.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupled::{coupled_trajectory, increment_mean};
use crate::error::{Error, Result};
use crate::kernel::run_chain;
use crate::model::MultilevelModel;
use crate::rng::{derive_stream, StreamPurpose, KEY_SCHEMA_VERSION};
use crate::stats::{batch_means, DEFAULT_BATCHES};

/// Relative slack on the bias criterion so exact-equality cases land on the
/// intended level despite rounding.
const BIAS_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// Increment variance decays like `h^beta`.
    pub beta: f64,
    /// Bias decays like `h^bias_rate`.
    pub bias_rate: f64,
    /// Cost per step grows like `h^-cost_rate`.
    pub cost_rate: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            beta: 4.0,
            bias_rate: 2.0,
            cost_rate: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationConstants {
    pub c_n: f64,
    pub c_b: f64,
    pub n_min: usize,
}

impl Default for AllocationConstants {
    fn default() -> Self {
        Self {
            c_n: 1.0,
            c_b: 1.0,
            n_min: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelAllocation {
    /// Finest level `L`.
    pub finest_level: usize,
    /// `N_0, ..., N_L`.
    pub samples: Vec<usize>,
    pub epsilon: f64,
    pub constants: AllocationConstants,
    pub rates: Rates,
}

/// Choose `L` and `N_0..N_L` for a root-MSE target `epsilon`.
///
/// `L` is the first level with `c_b h_L^rho <= epsilon / sqrt(2)` and
/// `N_l = max(n_min, ceil(c_n epsilon^-2 h_l^((beta + gamma) / 2)))`.
pub fn allocate(
    epsilon: f64,
    rates: Rates,
    h_schedule: &[f64],
    constants: AllocationConstants,
) -> Result<LevelAllocation> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(rates.beta > rates.cost_rate) {
        return Err(Error::Config(format!(
            "allocation needs beta > gamma, got beta = {} and gamma = {}",
            rates.beta, rates.cost_rate
        )));
    }
    if !(constants.c_n > 0.0) || !(constants.c_b > 0.0) || constants.n_min == 0 {
        return Err(Error::Config(format!("invalid allocation constants {constants:?}")));
    }
    if h_schedule.is_empty() {
        return Err(Error::Config("empty resolution schedule".into()));
    }
    let budget = epsilon / std::f64::consts::SQRT_2 * (1.0 + BIAS_SLACK);
    let finest_level = h_schedule
        .iter()
        .position(|h| constants.c_b * h.powf(rates.bias_rate) <= budget)
        .ok_or(Error::MaxLevelExceeded {
            max_level: h_schedule.len() - 1,
        })?;
    let exponent = 0.5 * (rates.beta + rates.cost_rate);
    let samples = h_schedule[..=finest_level]
        .iter()
        .map(|h| {
            let n = (constants.c_n * h.powf(exponent) / (epsilon * epsilon)).ceil();
            (n as usize).max(constants.n_min)
        })
        .collect();
    Ok(LevelAllocation {
        finest_level,
        samples,
        epsilon,
        constants,
        rates,
    })
}

/// One term of the telescoping sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTerm {
    pub level: usize,
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
    pub cost: u64,
}

/// Estimate the level-`level` term with its own stream: a plain chain for
/// level 0, a coupled chain for `level >= 1`.
pub fn level_term<M: MultilevelModel>(
    model: &M,
    level: usize,
    n: usize,
    master_seed: u64,
    replicate: u64,
    burn_in: usize,
) -> Result<LevelTerm> {
    if n == 0 {
        return Err(Error::EmptySample(format!("level {level} allocated no samples")));
    }
    let (est, cost) = if level == 0 {
        let kernel = model.kernel(0)?;
        let mut stream = derive_stream(master_seed, StreamPurpose::Level0, 0, replicate);
        let mut values = Vec::with_capacity(n);
        let (_, cost) = run_chain(&kernel, &model.initial_state(0), n, &mut stream, |x| {
            values.push(model.phi(x))
        })?;
        (chain_mean(&values, burn_in)?, cost)
    } else {
        let fine = model.kernel(level)?;
        let coarse = model.kernel(level - 1)?;
        let mut stream = derive_stream(master_seed, StreamPurpose::LevelPair, level, replicate);
        let run = coupled_trajectory(&fine, &coarse, &model.initial_state(level), n, &mut stream, |x| {
            model.phi(x)
        })?;
        (increment_mean(&run.increment_values(), burn_in)?, run.cost)
    };
    if !est.mean.is_finite() || !est.se.is_finite() {
        return Err(Error::NonFinite { level });
    }
    Ok(LevelTerm {
        level,
        mean: est.mean,
        se: est.se,
        samples: n,
        cost,
    })
}

fn chain_mean(values: &[f64], burn_in: usize) -> Result<crate::stats::MeanEstimate> {
    if burn_in >= values.len() {
        return Err(Error::EmptySample(format!(
            "burn-in {burn_in} leaves nothing of {} samples",
            values.len()
        )));
    }
    batch_means(&values[burn_in..], DEFAULT_BATCHES)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    MultiLevel,
    SingleLevel,
}

/// Everything needed to repeat an estimate bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateManifest {
    pub kind: EstimatorKind,
    pub model: String,
    pub master_seed: u64,
    pub replicate: u64,
    pub key_schema_version: u32,
    pub burn_in: usize,
    /// Finest level simulated.
    pub level: usize,
    pub samples: Vec<usize>,
    pub allocation: Option<LevelAllocation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlEstimate {
    pub value: f64,
    pub per_level_means: Vec<f64>,
    pub per_level_ses: Vec<f64>,
    pub per_level_costs: Vec<u64>,
    pub total_cost: u64,
    pub manifest: EstimateManifest,
}

impl MlEstimate {
    /// `sqrt(sum_l SE_l^2)`; the level terms are independent.
    pub fn combined_se(&self) -> f64 {
        self.per_level_ses.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    fn from_terms(terms: &[LevelTerm], manifest: EstimateManifest) -> Self {
        Self {
            value: terms.iter().map(|t| t.mean).sum(),
            per_level_means: terms.iter().map(|t| t.mean).collect(),
            per_level_ses: terms.iter().map(|t| t.se).collect(),
            per_level_costs: terms.iter().map(|t| t.cost).collect(),
            total_cost: terms.iter().map(|t| t.cost).sum(),
            manifest,
        }
    }
}

/// Run all terms of `allocation` in parallel and sum them in level order.
pub fn ml_estimate<M: MultilevelModel>(
    model: &M,
    allocation: &LevelAllocation,
    master_seed: u64,
    replicate: u64,
    burn_in: usize,
) -> Result<MlEstimate> {
    if allocation.finest_level > model.max_level() {
        return Err(Error::MaxLevelExceeded {
            max_level: model.max_level(),
        });
    }
    let terms = allocation
        .samples
        .par_iter()
        .enumerate()
        .map(|(level, &n)| level_term(model, level, n, master_seed, replicate, burn_in))
        .collect::<Result<Vec<_>>>()?;
    Ok(MlEstimate::from_terms(
        &terms,
        EstimateManifest {
            kind: EstimatorKind::MultiLevel,
            model: model.id(),
            master_seed,
            replicate,
            key_schema_version: KEY_SCHEMA_VERSION,
            burn_in,
            level: allocation.finest_level,
            samples: allocation.samples.clone(),
            allocation: Some(allocation.clone()),
        },
    ))
}

/// Plain MCMC at `level` for `n` steps.
pub fn single_level_estimate<M: MultilevelModel>(
    model: &M,
    level: usize,
    n: usize,
    master_seed: u64,
    replicate: u64,
    burn_in: usize,
) -> Result<MlEstimate> {
    if n == 0 {
        return Err(Error::EmptySample("single-level run with no samples".into()));
    }
    let kernel = model.kernel(level)?;
    let mut stream = derive_stream(master_seed, StreamPurpose::SingleLevel, level, replicate);
    let mut values = Vec::with_capacity(n);
    let (_, cost) = run_chain(&kernel, &model.initial_state(level), n, &mut stream, |x| {
        values.push(model.phi(x))
    })?;
    let est = chain_mean(&values, burn_in)?;
    if !est.mean.is_finite() {
        return Err(Error::NonFinite { level });
    }
    let term = LevelTerm {
        level,
        mean: est.mean,
        se: est.se,
        samples: n,
        cost,
    };
    Ok(MlEstimate::from_terms(
        &[term],
        EstimateManifest {
            kind: EstimatorKind::SingleLevel,
            model: model.id(),
            master_seed,
            replicate,
            key_schema_version: KEY_SCHEMA_VERSION,
            burn_in,
            level,
            samples: vec![n],
            allocation: None,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hier::{simulate_data, HierGaussModel, HierModelConfig};

    fn hier_h(levels: usize) -> Vec<f64> {
        (0..=levels).map(|l| 1.0 / (8 << l) as f64).collect()
    }

    fn hier_model(max_level: usize) -> HierGaussModel {
        let config = HierModelConfig {
            max_level,
            ..HierModelConfig::default()
        };
        let mut s = derive_stream(77, StreamPurpose::Data, 0, 0);
        let y = simulate_data(config.lambda, 1.0, config.k(max_level), &mut s).unwrap();
        HierGaussModel::new(config, y).unwrap()
    }

    #[test]
    fn level_zero_sample_count() {
        let a = allocate(0.01, Rates::default(), &hier_h(10), AllocationConstants::default()).unwrap();
        // 1e4 * 0.125^2.5 = 55.24...
        assert_eq!(a.samples[0], 56);
        assert_eq!(a.finest_level, 1);
        assert_eq!(a.samples, vec![56, 10]);
    }

    #[test]
    fn bias_boundary_lands_on_level() {
        let h = hier_h(10);
        let rates = Rates::default();
        let eps = std::f64::consts::SQRT_2 * h[2] * h[2];
        assert_eq!(allocate(eps, rates, &h, AllocationConstants::default()).unwrap().finest_level, 2);
    }

    #[test]
    fn halving_epsilon_quadruples_raw_counts() {
        let h = hier_h(12);
        let c = AllocationConstants {
            c_n: 1.0,
            c_b: 1e-9,
            n_min: 1,
        };
        let a = allocate(0.02, Rates::default(), &h, c).unwrap();
        let b = allocate(0.01, Rates::default(), &h, c).unwrap();
        for (l, (na, nb)) in a.samples.iter().zip(&b.samples).enumerate() {
            let raw = h[l].powf(2.5) / 0.02f64.powi(2);
            assert_eq!(*na, raw.ceil() as usize);
            assert_eq!(*nb, (4.0 * raw).ceil() as usize);
        }
    }

    #[test]
    fn samples_are_non_increasing() {
        let a = allocate(1e-4, Rates::default(), &hier_h(12), AllocationConstants::default()).unwrap();
        assert!(a.samples.windows(2).all(|w| w[0] >= w[1]));
        assert!(a.samples.iter().all(|&n| n >= 2));
    }

    #[test]
    fn allocation_errors() {
        let h = hier_h(3);
        let c = AllocationConstants::default();
        match allocate(1e-6, Rates::default(), &h, c) {
            Err(Error::MaxLevelExceeded { max_level }) => assert_eq!(max_level, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(allocate(0.0, Rates::default(), &h, c).is_err());
        let flat = Rates {
            beta: 1.0,
            ..Rates::default()
        };
        assert!(matches!(allocate(0.01, flat, &h, c), Err(Error::Config(_))));
    }

    #[test]
    fn empty_telescope_is_plain_mcmc() {
        let m = hier_model(2);
        let a = allocate(0.04, Rates::default(), &m.h_schedule(), AllocationConstants::default()).unwrap();
        assert_eq!(a.finest_level, 0);
        let est = ml_estimate(&m, &a, 5, 0, 0).unwrap();
        let direct = level_term(&m, 0, a.samples[0], 5, 0, 0).unwrap();
        assert_eq!(est.value, direct.mean);
        assert_eq!(est.total_cost, direct.cost);
    }

    #[test]
    fn estimates_are_deterministic() {
        let m = hier_model(3);
        let a = allocate(0.005, Rates::default(), &m.h_schedule(), AllocationConstants::default()).unwrap();
        let x = ml_estimate(&m, &a, 9, 1, 0).unwrap();
        let y = ml_estimate(&m, &a, 9, 1, 0).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.value.to_bits(), y.value.to_bits());
        let s1 = single_level_estimate(&m, 2, 50, 9, 1, 0).unwrap();
        let s2 = single_level_estimate(&m, 2, 50, 9, 1, 0).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn level_order_does_not_matter() {
        let m = hier_model(3);
        let a = allocate(0.005, Rates::default(), &m.h_schedule(), AllocationConstants::default()).unwrap();
        let est = ml_estimate(&m, &a, 21, 0, 0).unwrap();
        let mut terms: Vec<LevelTerm> = (0..=a.finest_level)
            .rev()
            .map(|l| level_term(&m, l, a.samples[l], 21, 0, 0).unwrap())
            .collect();
        terms.sort_by_key(|t| t.level);
        let sum: f64 = terms.iter().map(|t| t.mean).sum();
        assert_eq!(sum.to_bits(), est.value.to_bits());
    }

    #[test]
    fn value_is_sum_of_terms_and_cost_adds_up() {
        let m = hier_model(3);
        let a = allocate(0.005, Rates::default(), &m.h_schedule(), AllocationConstants::default()).unwrap();
        let est = ml_estimate(&m, &a, 3, 0, 0).unwrap();
        assert_eq!(est.value, est.per_level_means.iter().sum::<f64>());
        assert_eq!(est.total_cost, est.per_level_costs.iter().sum::<u64>());
        assert_eq!(est.per_level_costs[0], (8 + 1) * a.samples[0] as u64);
        for l in 1..=a.finest_level {
            let expected = (m.k(l) + m.k(l - 1) + 1) as f64 * a.samples[l] as f64;
            let rel = (est.per_level_costs[l] as f64 - expected).abs() / expected;
            assert!(rel < 0.01);
        }
    }

    #[test]
    fn single_step_cost() {
        let m = hier_model(3);
        let est = single_level_estimate(&m, 3, 1, 1, 0, 0).unwrap();
        assert_eq!(est.total_cost, 64 + 1);
        assert_eq!(est.manifest.kind, EstimatorKind::SingleLevel);
    }

    #[test]
    fn moderate_accuracy_matches_oracle() {
        let m = hier_model(4);
        let a = allocate(0.02, Rates::default(), &m.h_schedule(), AllocationConstants::default()).unwrap();
        let oracle = m.posterior_oracle(a.finest_level).unwrap();
        let est = ml_estimate(&m, &a, 13, 0, 0).unwrap();
        assert!(
            (est.value - oracle).abs() <= 3.0 * est.combined_se(),
            "{} vs {} (se {})",
            est.value,
            oracle,
            est.combined_se()
        );
    }
}
