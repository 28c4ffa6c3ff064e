//! A compact one-dimensional target family whose only kernel is a
//! random-walk MH map, used to show how rejection degrades the coupling.
//!
//! Level `l` is a centred Gaussian truncated to `[-3, 3]` with variance
//! `1 + h_l^r`, `h_l = 2^(-l-1)`, so neighbouring levels differ by `O(h_l^r)`.

use crate::error::{Error, Result};
use crate::kernel::{MhKernel, TargetDensity};
use crate::model::MultilevelModel;
use crate::quadrature::{integrate, QuadOptions};
use crate::rng::RngStream;

pub const SYNTHETIC_BOUND: f64 = 3.0;
pub const SYNTHETIC_SCALE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTarget {
    pub level: usize,
    pub rate: f64,
    pub h: f64,
    pub variance: f64,
    normalizer: f64,
}

impl SyntheticTarget {
    pub fn new(level: usize, rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Domain(format!("rate must be positive, got {rate}")));
        }
        let h = synthetic_h(level);
        let variance = 1.0 + h.powf(rate);
        let normalizer = integrate(
            |x| (-0.5 * x * x / variance).exp(),
            -SYNTHETIC_BOUND,
            SYNTHETIC_BOUND,
            QuadOptions {
                rel_tol: 1e-13,
                ..QuadOptions::default()
            },
        )?
        .value;
        Ok(Self {
            level,
            rate,
            h,
            variance,
            normalizer,
        })
    }

    /// Normalised density on the support, zero outside.
    pub fn density(&self, x: f64) -> f64 {
        if x.abs() > SYNTHETIC_BOUND {
            0.0
        } else {
            (-0.5 * x * x / self.variance).exp() / self.normalizer
        }
    }

    /// `E[x^2]` under the normalised target.
    pub fn second_moment(&self) -> Result<f64> {
        let v = self.variance;
        Ok(integrate(
            |x| x * x * (-0.5 * x * x / v).exp(),
            -SYNTHETIC_BOUND,
            SYNTHETIC_BOUND,
            QuadOptions {
                rel_tol: 1e-13,
                ..QuadOptions::default()
            },
        )?
        .value
            / self.normalizer)
    }
}

impl TargetDensity for SyntheticTarget {
    fn dim(&self) -> usize {
        1
    }

    fn in_support(&self, x: &[f64]) -> bool {
        x[0].abs() <= SYNTHETIC_BOUND
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        -0.5 * x[0] * x[0] / self.variance
    }
}

fn synthetic_h(level: usize) -> f64 {
    0.5f64.powi(level as i32 + 1)
}

/// The level-`level` synthetic target and its fixed-scale MH kernel.
pub fn synthetic_target(
    level: usize,
    rate_beta_prime: f64,
) -> Result<(SyntheticTarget, MhKernel<SyntheticTarget>)> {
    let target = SyntheticTarget::new(level, rate_beta_prime)?;
    let kernel = MhKernel::new(level, target.clone(), SYNTHETIC_SCALE)?;
    Ok((target, kernel))
}

/// The synthetic family as a multilevel model with `phi(x) = x^2`.
#[derive(Clone, Debug)]
pub struct SyntheticModel {
    pub rate: f64,
    pub max_level: usize,
}

impl MultilevelModel for SyntheticModel {
    type Kernel = MhKernel<SyntheticTarget>;

    fn id(&self) -> String {
        format!("synthetic-mh(rate={})", self.rate)
    }

    fn max_level(&self) -> usize {
        self.max_level
    }

    fn h(&self, level: usize) -> f64 {
        synthetic_h(level)
    }

    fn kernel(&self, level: usize) -> Result<Self::Kernel> {
        Ok(synthetic_target(level, self.rate)?.1)
    }

    fn initial_state(&self, _level: usize) -> Vec<f64> {
        vec![0.0]
    }

    fn phi(&self, state: &[f64]) -> f64 {
        state[0] * state[0]
    }

    fn probe_state(&self, _level: usize, stream: &mut RngStream) -> Vec<f64> {
        vec![SYNTHETIC_BOUND * (2.0 * stream.draw_uniform() - 1.0)]
    }

    fn reference_value(&self, level: usize) -> Option<Result<f64>> {
        Some(SyntheticTarget::new(level, self.rate).and_then(|t| t.second_moment()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{run_chain, IteratedMapKernel};
    use crate::rng::{derive_stream, StreamPurpose};
    use crate::stats::log2_fit;

    #[test]
    fn same_level_same_parameters() {
        let (a, _) = synthetic_target(3, 1.0).unwrap();
        let (b, _) = synthetic_target(3, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deep_levels_approach_truncated_standard_normal() {
        let (t, _) = synthetic_target(60, 1.0).unwrap();
        assert_eq!(t.variance, 1.0);
        // P(|Z| <= 3) * sqrt(2 pi)
        let z = 0.997_300_203_936_739_8 * (2.0 * std::f64::consts::PI).sqrt();
        assert!((t.density(0.0) - 1.0 / z).abs() < 1e-12);
    }

    #[test]
    fn level_gap_scales_like_h_to_the_rate() {
        for rate in [1.0, 2.0] {
            let grid: Vec<f64> = (0..10_000)
                .map(|i| -SYNTHETIC_BOUND + 2.0 * SYNTHETIC_BOUND * i as f64 / 9_999.0)
                .collect();
            let mut hs = Vec::new();
            let mut gaps = Vec::new();
            for level in 1..=8 {
                let (fine, _) = synthetic_target(level, rate).unwrap();
                let (coarse, _) = synthetic_target(level - 1, rate).unwrap();
                // normalise on the grid independently of the quadrature normaliser
                let wf: f64 = grid.iter().map(|&x| (-0.5 * x * x / fine.variance).exp()).sum();
                let wc: f64 = grid.iter().map(|&x| (-0.5 * x * x / coarse.variance).exp()).sum();
                let sup = grid
                    .iter()
                    .map(|&x| {
                        ((-0.5 * x * x / fine.variance).exp() / wf
                            - (-0.5 * x * x / coarse.variance).exp() / wc)
                            .abs()
                    })
                    .fold(0.0, f64::max);
                hs.push(fine.h);
                gaps.push(sup);
            }
            let slope = log2_fit(&hs, &gaps).unwrap().slope;
            assert!((slope - rate).abs() <= 0.2, "rate {rate}: slope {slope}");
        }
    }

    #[test]
    fn long_run_histogram_matches_target() {
        let (target, kernel) = synthetic_target(2, 1.0).unwrap();
        let bins = 40;
        let width = 2.0 * SYNTHETIC_BOUND / bins as f64;
        let mut counts = vec![0usize; bins];
        let mut s = derive_stream(9, StreamPurpose::Level0, 2, 0);
        let n = 1_000_000;
        run_chain(&kernel, &[0.0], n, &mut s, |x| {
            let b = (((x[0] + SYNTHETIC_BOUND) / width) as usize).min(bins - 1);
            counts[b] += 1;
        })
        .unwrap();
        let mass: Vec<f64> = (0..bins)
            .map(|b| {
                let lo = -SYNTHETIC_BOUND + b as f64 * width;
                (0..100)
                    .map(|k| target.density(lo + (k as f64 + 0.5) * width / 100.0) * width / 100.0)
                    .sum()
            })
            .collect();
        let total: f64 = mass.iter().sum();
        let tv = 0.5
            * counts
                .iter()
                .zip(&mass)
                .map(|(&c, &m)| (c as f64 / n as f64 - m / total).abs())
                .sum::<f64>();
        assert!(tv < 0.02, "total variation {tv}");
    }

    #[test]
    fn one_step_from_exact_draw_preserves_moments() {
        let (target, kernel) = synthetic_target(1, 1.0).unwrap();
        // inverse CDF on a fine grid
        let grid_n = 20_000;
        let dx = 2.0 * SYNTHETIC_BOUND / grid_n as f64;
        let mut cdf = Vec::with_capacity(grid_n + 1);
        cdf.push(0.0);
        for i in 0..grid_n {
            let mid = -SYNTHETIC_BOUND + (i as f64 + 0.5) * dx;
            cdf.push(cdf[i] + target.density(mid) * dx);
        }
        let total = cdf[grid_n];
        let exact = |u: f64| {
            let t = u * total;
            let i = cdf.partition_point(|&c| c < t).clamp(1, grid_n);
            let frac = (t - cdf[i - 1]) / (cdf[i] - cdf[i - 1]);
            -SYNTHETIC_BOUND + (i as f64 - 1.0 + frac) * dx
        };
        let reps = 10_000;
        let mut s = derive_stream(10, StreamPurpose::Oracle, 1, 0);
        let mut x0 = Vec::with_capacity(reps);
        let mut x1 = Vec::with_capacity(reps);
        for _ in 0..reps {
            let start = exact(s.draw_uniform());
            let next = kernel.step(&[start], &mut s).unwrap().0[0];
            x0.push(start);
            x1.push(next);
        }
        for power in [1, 2] {
            let d: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| b.powi(power) - a.powi(power)).collect();
            let mean = d.iter().sum::<f64>() / reps as f64;
            let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
            assert!(mean.abs() < 4.0 * sd / (reps as f64).sqrt(), "moment {power}: {mean} vs sd {sd}");
        }
    }

}
