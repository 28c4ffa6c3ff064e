//! Ergodic-average summaries and least-squares fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of batches used for batch-means standard errors.
pub const DEFAULT_BATCHES: usize = 32;

/// A Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

/// Mean of `samples` with a batch-means standard error.
///
/// The samples are cut into `min(batches, n)` contiguous batches whose sizes
/// differ by at most one; the SE is the standard deviation of the batch
/// means over the square root of the batch count. A single sample has SE 0.
pub fn batch_means(samples: &[f64], batches: usize) -> Result<MeanEstimate> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::EmptySample("no samples to average".into()));
    }
    // shift by the first sample so constant input averages exactly
    let pivot = samples[0];
    let mean = pivot + shifted_mean(samples, pivot);
    let b = batches.max(1).min(n);
    if b < 2 {
        return Ok(MeanEstimate { mean, se: 0.0, n });
    }
    let batch_avgs: Vec<f64> = (0..b)
        .map(|i| {
            let lo = i * n / b;
            let hi = (i + 1) * n / b;
            shifted_mean(&samples[lo..hi], pivot)
        })
        .collect();
    let centre = batch_avgs.iter().sum::<f64>() / b as f64;
    let var = batch_avgs.iter().map(|m| (m - centre).powi(2)).sum::<f64>() / (b - 1) as f64;
    Ok(MeanEstimate {
        mean,
        se: (var / b as f64).sqrt(),
        n,
    })
}

fn shifted_mean(xs: &[f64], pivot: f64) -> f64 {
    xs.iter().map(|x| x - pivot).sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn sample_variance(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Sample variance with a batch-means SE computed on the squared deviations.
pub fn variance_estimate(samples: &[f64], batches: usize) -> Result<MeanEstimate> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::EmptySample("variance needs at least two samples".into()));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let scale = n as f64 / (n - 1) as f64;
    let sq: Vec<f64> = samples.iter().map(|x| scale * (x - mean).powi(2)).collect();
    batch_means(&sq, batches)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<OlsFit> {
    if xs.len() != ys.len() {
        return Err(Error::Precondition(format!(
            "regression inputs differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Precondition("regression needs at least two points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Domain("regression input is not finite".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::Precondition("regression abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(OlsFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// OLS on `(log2 x, log2 y)`; all inputs must be strictly positive.
pub fn log2_fit(xs: &[f64], ys: &[f64]) -> Result<OlsFit> {
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("log-log regression needs positive inputs".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.log2()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.log2()).collect();
    ols(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_samples_have_zero_se() {
        let est = batch_means(&[0.7; 100], DEFAULT_BATCHES).unwrap();
        assert_eq!(est.mean, 0.7);
        assert_eq!(est.se, 0.0);
    }

    #[test]
    fn small_arithmetic() {
        let est = batch_means(&[1.0, 2.0, 3.0, 4.0], DEFAULT_BATCHES).unwrap();
        assert_eq!(est.mean, 2.5);
        // four batches of one: sd of {1,2,3,4} / 2
        assert_relative_eq!(est.se, (5.0f64 / 3.0).sqrt() / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn empty_is_error() {
        assert!(batch_means(&[], 32).is_err());
    }

    #[test]
    fn iid_se_close_to_classical() {
        let mut s = crate::rng::derive_stream(5, crate::rng::StreamPurpose::Oracle, 0, 0);
        let xs = s.draw_gaussian_vector(64_000);
        let est = batch_means(&xs, 32).unwrap();
        let classical = 1.0 / (64_000f64).sqrt();
        assert!((est.se / classical - 1.0).abs() < 0.35, "ratio {}", est.se / classical);
    }

    #[test]
    fn exact_power_slope() {
        let h = [0.0625, 0.03125, 0.015625];
        let v: Vec<f64> = h.iter().map(|x: &f64| x.powi(4)).collect();
        let fit = log2_fit(&h, &v).unwrap();
        assert_relative_eq!(fit.slope, 4.0, max_relative = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_regressions() {
        assert!(ols(&[1.0], &[2.0]).is_err());
        assert!(ols(&[1.0, 1.0], &[2.0, 3.0]).is_err());
        assert!(log2_fit(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }
}
