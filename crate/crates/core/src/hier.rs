//! Hierarchical Gaussian model with a Gamma-distributed prior precision.
//!
//! Observations `y_j | u_j ~ N(u_j, 1/lambda)`, joint prior
//! `exp(-delta/2 sum_j j^-3 u_j^2) delta^(alpha0-1) exp(-kappa0 delta)`.
//! Level `l` keeps the first `K_l = M0 2^l` coordinates; `h_l = 1/K_l`.
//!
//! Full conditionals (coordinate `j`, weight `w_j = j^-3`):
//!
//! ```text
//! u_j | y, delta    ~ N(lambda y_j / (delta w_j + lambda), 1 / (delta w_j + lambda))
//! delta | y, u      ~ Gamma(alpha0, rate kappa_l),  kappa_l = kappa0 + 1/2 sum_j w_j u_j^2
//! ```
//!
//! Integrating `u` out of the joint gives the one-dimensional marginal
//!
//! ```text
//! p(delta | y) ∝ delta^(alpha0-1) e^(-kappa0 delta)
//!                prod_j (lambda + delta w_j)^(-1/2) exp(-y_j^2 lambda delta w_j / (2 (lambda + delta w_j)))
//! ```
//!
//! which drives both the quadrature oracle and the exact posterior sampler.
//! Note the prior has no `delta^(K/2)` factor, so this is not the marginal
//! of a normalised Gaussian prior on `u`; the Gibbs step for `delta` above
//! is exact for this joint only.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coupled::{coupled_step, CoupledState};
use crate::error::{Error, Result};
use crate::kernel::{ConditionalMap, GibbsKernel, Innovation, InnovationKind, IteratedMapKernel};
use crate::model::MultilevelModel;
use crate::quadrature::{integrate, QuadOptions};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierModelConfig {
    pub alpha0: f64,
    pub kappa0: f64,
    /// Observation precision.
    pub lambda: f64,
    pub m0: usize,
    pub max_level: usize,
}

impl Default for HierModelConfig {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            kappa0: 0.1,
            lambda: 1000.0,
            m0: 8,
            max_level: 10,
        }
    }
}

impl HierModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha0", self.alpha0), ("kappa0", self.kappa0), ("lambda", self.lambda)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.m0 == 0 {
            return Err(Error::Config("m0 must be at least 1".into()));
        }
        if self.max_level > 24 {
            return Err(Error::Config(format!("max_level {} is too deep", self.max_level)));
        }
        Ok(())
    }

    pub fn k(&self, level: usize) -> usize {
        self.m0 << level
    }

    pub fn h(&self, level: usize) -> f64 {
        1.0 / self.k(level) as f64
    }
}

/// Latent field and observations from [`simulate_latent_and_data`].
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedData {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
}

/// Draw `u_j ~ N(0, j^-3 / true_delta)` for `j = 1..=k_max`, then
/// `y_j ~ N(u_j, 1/lambda)`. All `u` are drawn before any noise.
pub fn simulate_latent_and_data(
    lambda: f64,
    true_delta: f64,
    k_max: usize,
    stream: &mut RngStream,
) -> Result<SimulatedData> {
    if !(true_delta > 0.0) || !(lambda > 0.0) {
        return Err(Error::Domain(format!(
            "true_delta and lambda must be positive (got {true_delta}, {lambda})"
        )));
    }
    if k_max == 0 {
        return Err(Error::Domain("need at least one observation".into()));
    }
    let u: Vec<f64> = (1..=k_max)
        .map(|j| {
            let sd = ((j as f64).powi(3) * true_delta).sqrt().recip();
            sd * stream.draw_gaussian()
        })
        .collect();
    let noise_sd = lambda.sqrt().recip();
    let y = u.iter().map(|ui| ui + noise_sd * stream.draw_gaussian()).collect();
    Ok(SimulatedData { u, y })
}

pub fn simulate_data(lambda: f64, true_delta: f64, k_max: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
    Ok(simulate_latent_and_data(lambda, true_delta, k_max, stream)?.y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierState {
    pub u: Vec<f64>,
    pub delta: f64,
}

impl HierState {
    /// Flat layout `[u_1, ..., u_K, delta]` used by the kernels.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.u.clone();
        v.push(self.delta);
        v
    }

    pub fn from_slice(x: &[f64]) -> Self {
        let (delta, u) = x.split_last().expect("state holds at least delta");
        Self {
            u: u.to_vec(),
            delta: *delta,
        }
    }
}

/// Mean and diagonal covariance of `u_{1:K} | y, delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalParams {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

struct ModelData {
    config: HierModelConfig,
    y: Vec<f64>,
    /// `j^-3` for `j = 1..`
    weights: Vec<f64>,
}

#[derive(Clone)]
pub struct HierGaussModel {
    data: Arc<ModelData>,
}

impl std::fmt::Debug for HierGaussModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HierGaussModel")
            .field("config", &self.data.config)
            .field("observations", &self.data.y.len())
            .finish()
    }
}

impl HierGaussModel {
    /// `y` must hold at least `K_max_level` observations; extra entries are
    /// ignored.
    pub fn new(config: HierModelConfig, y: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let needed = config.k(config.max_level);
        if y.len() < needed {
            return Err(Error::Config(format!(
                "data has {} observations, level {} needs {needed}",
                y.len(),
                config.max_level
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("data contains non-finite values".into()));
        }
        let mut y = y;
        y.truncate(needed);
        let weights = (1..=needed).map(|j| (j as f64).powi(-3)).collect();
        Ok(Self {
            data: Arc::new(ModelData { config, y, weights }),
        })
    }

    pub fn config(&self) -> &HierModelConfig {
        &self.data.config
    }

    pub fn data(&self) -> &[f64] {
        &self.data.y
    }

    pub fn k(&self, level: usize) -> usize {
        self.data.config.k(level)
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level > self.data.config.max_level {
            return Err(Error::Config(format!(
                "level {level} exceeds max_level {}",
                self.data.config.max_level
            )));
        }
        Ok(())
    }

    pub fn u_conditional(&self, level: usize, delta: f64) -> Result<ConditionalParams> {
        self.check_level(level)?;
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Domain(format!("delta must be positive, got {delta}")));
        }
        let k = self.k(level);
        let lambda = self.data.config.lambda;
        let (mean, variance) = self.data.y[..k]
            .iter()
            .zip(&self.data.weights[..k])
            .map(|(y, w)| {
                let precision = delta * w + lambda;
                (lambda * y / precision, precision.recip())
            })
            .unzip();
        Ok(ConditionalParams { mean, variance })
    }

    /// `kappa0 + 1/2 sum_j j^-3 u_j^2` over the `u` given.
    pub fn delta_conditional_rate(&self, u: &[f64]) -> f64 {
        delta_rate(self.data.config.kappa0, &self.data.weights, u)
    }

    pub fn phi(&self, state: &[f64]) -> f64 {
        let m0 = self.data.config.m0;
        state[..m0].iter().sum::<f64>() / m0 as f64
    }

    pub fn gibbs_kernel(&self, level: usize) -> Result<HierKernel> {
        self.check_level(level)?;
        let k = self.k(level);
        let blocks: Vec<Arc<dyn ConditionalMap>> = vec![
            Arc::new(UBlock {
                data: self.data.clone(),
                k,
            }),
            Arc::new(DeltaBlock {
                data: self.data.clone(),
                k,
            }),
        ];
        Ok(HierKernel {
            inner: GibbsKernel::new(level, k + 1, blocks)?,
            k,
        })
    }

    /// One coupled sweep of levels `level` and `level - 1`: a single
    /// `V_{1:K_l}` drives both u-blocks (the coarse one through its prefix)
    /// and a single `W ~ Gamma(alpha0, 1)` sets `delta = W / kappa` on each.
    pub fn coupled_sweep(
        &self,
        level: usize,
        s: &CoupledState,
        stream: &mut RngStream,
    ) -> Result<(CoupledState, u64)> {
        if level == 0 {
            return Err(Error::Precondition("coupled sweep needs level >= 1".into()));
        }
        let fine = self.gibbs_kernel(level)?;
        let coarse = self.gibbs_kernel(level - 1)?;
        if s.fine.len() != fine.state_dim() || s.coarse.len() != coarse.state_dim() {
            return Err(Error::Precondition(format!(
                "coupled state has dimensions ({}, {}), expected ({}, {})",
                s.fine.len(),
                s.coarse.len(),
                fine.state_dim(),
                coarse.state_dim()
            )));
        }
        coupled_step(&fine, &coarse, s, stream)
    }

    /// The `delta` marginal at `level`.
    pub fn delta_posterior(&self, level: usize) -> Result<DeltaPosterior> {
        self.check_level(level)?;
        DeltaPosterior::new(&self.data.config, &self.data.y[..self.k(level)], &self.data.weights)
    }

    /// `E[phi | y_{1:K_l}]` by one-dimensional quadrature over `delta`.
    pub fn posterior_oracle(&self, level: usize) -> Result<f64> {
        let post = self.delta_posterior(level)?;
        let cfg = &self.data.config;
        let m0 = cfg.m0;
        let lambda = cfg.lambda;
        let y = &self.data.y[..m0];
        let w = &self.data.weights[..m0];
        post.expectation(|delta| {
            y.iter()
                .zip(w)
                .map(|(yj, wj)| lambda * yj / (delta * wj + lambda))
                .sum::<f64>()
                / m0 as f64
        })
    }

    pub fn exact_sampler(&self, level: usize) -> Result<ExactPosteriorSampler> {
        Ok(ExactPosteriorSampler {
            model: self.clone(),
            level,
            table: self.delta_posterior(level)?.inverse_cdf_table(EXACT_GRID_CELLS)?,
        })
    }
}

fn delta_rate(kappa0: f64, weights: &[f64], u: &[f64]) -> f64 {
    kappa0 + 0.5 * u.iter().zip(weights).map(|(ui, w)| w * ui * ui).sum::<f64>()
}

struct UBlock {
    data: Arc<ModelData>,
    k: usize,
}

impl ConditionalMap for UBlock {
    fn block(&self) -> Range<usize> {
        0..self.k
    }

    fn innovation(&self) -> InnovationKind {
        InnovationKind::GaussianVector(self.k)
    }

    fn sample(&self, state: &[f64], u: &Innovation, out: &mut [f64]) -> std::result::Result<(), String> {
        let delta = state[self.k];
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(format!("delta = {delta} gives no valid u conditional"));
        }
        let z = match u {
            Innovation::Gaussian(z) if z.len() == self.k => z,
            other => return Err(format!("u-block expects {} normals, got {other:?}", self.k)),
        };
        let lambda = self.data.config.lambda;
        let y = &self.data.y[..self.k];
        let w = &self.data.weights[..self.k];
        for (((o, yj), wj), zj) in out.iter_mut().zip(y).zip(w).zip(z) {
            let precision = delta * wj + lambda;
            *o = lambda * yj / precision + zj / precision.sqrt();
        }
        Ok(())
    }
}

struct DeltaBlock {
    data: Arc<ModelData>,
    k: usize,
}

impl ConditionalMap for DeltaBlock {
    fn block(&self) -> Range<usize> {
        self.k..self.k + 1
    }

    fn innovation(&self) -> InnovationKind {
        InnovationKind::Gamma(self.data.config.alpha0)
    }

    fn sample(&self, state: &[f64], u: &Innovation, out: &mut [f64]) -> std::result::Result<(), String> {
        let w = match u {
            Innovation::Gamma(w) => *w,
            other => return Err(format!("delta block expects a Gamma variate, got {other:?}")),
        };
        let rate = delta_rate(self.data.config.kappa0, &self.data.weights[..self.k], &state[..self.k]);
        let delta = w / rate;
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(format!("delta update W/kappa = {w}/{rate} is not positive"));
        }
        out[0] = delta;
        Ok(())
    }
}

/// The level-`l` Gibbs sweep (u-block, then delta) on states `[u_{1:K_l}, delta]`.
#[derive(Clone, Debug)]
pub struct HierKernel {
    inner: GibbsKernel,
    k: usize,
}

impl HierKernel {
    pub fn gibbs(&self) -> &GibbsKernel {
        &self.inner
    }
}

impl IteratedMapKernel for HierKernel {
    fn level(&self) -> usize {
        self.inner.level()
    }

    fn state_dim(&self) -> usize {
        self.k + 1
    }

    fn innovation_layout(&self) -> &[InnovationKind] {
        self.inner.innovation_layout()
    }

    fn apply(&self, x: &[f64], innovations: &[Innovation]) -> Result<Vec<f64>> {
        self.inner.apply(x, innovations)
    }

    /// Keep `u_{1:K}` and `delta` of a finer state.
    fn project(&self, finer: &[f64]) -> Vec<f64> {
        let mut x = finer[..self.k].to_vec();
        x.push(*finer.last().expect("non-empty state"));
        x
    }

    /// Zero-pad the u coordinates of a coarser state, keeping its `delta`.
    fn embed(&self, coarser: &[f64]) -> Vec<f64> {
        let (delta, u) = coarser.split_last().expect("non-empty state");
        let mut x = u.to_vec();
        x.resize(self.k, 0.0);
        x.push(*delta);
        x
    }
}

impl MultilevelModel for HierGaussModel {
    type Kernel = HierKernel;

    fn id(&self) -> String {
        let c = &self.data.config;
        format!(
            "hier-gauss(alpha0={},kappa0={},lambda={},m0={})",
            c.alpha0, c.kappa0, c.lambda, c.m0
        )
    }

    fn max_level(&self) -> usize {
        self.data.config.max_level
    }

    fn h(&self, level: usize) -> f64 {
        self.data.config.h(level)
    }

    fn kernel(&self, level: usize) -> Result<HierKernel> {
        self.gibbs_kernel(level)
    }

    /// `u = 0`, `delta = 1`.
    fn initial_state(&self, level: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.k(level)];
        x.push(1.0);
        x
    }

    fn phi(&self, state: &[f64]) -> f64 {
        HierGaussModel::phi(self, state)
    }

    /// `u_j` uniform within 0.1 of `y_j`, `delta` uniform on `[0.05, 5]`.
    fn probe_state(&self, level: usize, stream: &mut RngStream) -> Vec<f64> {
        let k = self.k(level);
        let mut x: Vec<f64> = self.data.y[..k]
            .iter()
            .map(|y| y + 0.1 * (2.0 * stream.draw_uniform() - 1.0))
            .collect();
        x.push(0.05 + 4.95 * stream.draw_uniform());
        x
    }

    fn reference_value(&self, level: usize) -> Option<Result<f64>> {
        Some(self.posterior_oracle(level))
    }
}

/// Log-density drop, relative to the mode, beyond which mass is ignored.
const TAIL_LOG_DROP: f64 = 46.0;
const EXACT_GRID_CELLS: usize = 4096;

/// The marginal posterior of `delta`, represented in the coordinate
/// `s = delta^a` with `a = min(alpha0, 1)` so the density in `s` stays
/// bounded at the origin even when `alpha0 < 1`.
#[derive(Clone, Debug)]
pub struct DeltaPosterior {
    alpha0: f64,
    kappa0: f64,
    lambda: f64,
    power: f64,
    y: Vec<f64>,
    weights: Vec<f64>,
    log_peak: f64,
    s_lo: f64,
    s_mode: f64,
    s_hi: f64,
}

impl DeltaPosterior {
    fn new(config: &HierModelConfig, y: &[f64], weights: &[f64]) -> Result<Self> {
        let mut post = Self {
            alpha0: config.alpha0,
            kappa0: config.kappa0,
            lambda: config.lambda,
            power: config.alpha0.min(1.0),
            y: y.to_vec(),
            weights: weights[..y.len()].to_vec(),
            log_peak: 0.0,
            s_lo: 0.0,
            s_mode: 0.0,
            s_hi: 0.0,
        };
        post.locate()?;
        Ok(post)
    }

    fn delta_of(&self, s: f64) -> f64 {
        if self.power == 1.0 {
            s
        } else {
            s.powf(self.power.recip())
        }
    }

    fn s_of(&self, delta: f64) -> f64 {
        if self.power == 1.0 {
            delta
        } else {
            delta.powf(self.power)
        }
    }

    /// Unnormalised log-density of `s` evaluated at `delta = s^(1/a)`.
    pub fn log_density(&self, delta: f64) -> f64 {
        let lambda = self.lambda;
        let mut acc = -self.kappa0 * delta;
        let exponent = self.alpha0 - self.power;
        if exponent != 0.0 {
            acc += exponent * delta.ln();
        }
        for (yj, wj) in self.y.iter().zip(&self.weights) {
            let prior = delta * wj;
            let total = lambda + prior;
            acc -= 0.5 * total.ln() + 0.5 * yj * yj * lambda * prior / total;
        }
        acc
    }

    fn locate(&mut self) -> Result<()> {
        // coarse scan of log(delta), then golden-section refinement
        let (lo_ln, hi_ln, step) = (-30.0f64, 30.0f64, 0.05);
        let n = ((hi_ln - lo_ln) / step) as usize;
        let mut best = (f64::NEG_INFINITY, 0usize);
        for i in 0..=n {
            let v = self.log_density((lo_ln + step * i as f64).exp());
            if v > best.0 {
                best = (v, i);
            }
        }
        if !best.0.is_finite() {
            return Err(Error::Quadrature("delta posterior is not finite anywhere on the scan".into()));
        }
        let centre = lo_ln + step * best.1 as f64;
        let (mut a, mut b) = (centre - step, centre + step);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if self.log_density(c.exp()) > self.log_density(d.exp()) {
                b = d;
            } else {
                a = c;
            }
        }
        let mode_ln = 0.5 * (a + b);
        let mode = mode_ln.exp();
        let log_peak = self.log_density(mode).max(best.0);
        let floor = log_peak - TAIL_LOG_DROP;

        let upper = self.tail_bound(mode_ln, floor, 1.0).ok_or_else(|| {
            Error::Quadrature("delta posterior has no upper tail within range".into())
        })?;
        let lower = self.tail_bound(mode_ln, floor, -1.0);

        self.log_peak = log_peak;
        self.s_mode = self.s_of(mode);
        self.s_hi = self.s_of(upper);
        self.s_lo = lower.map_or(0.0, |d| self.s_of(d));
        Ok(())
    }

    /// Walk away from the mode in `log(delta)` with doubling steps until the
    /// density falls below `floor`, then bisect. `None` when the walk leaves
    /// the representable range first.
    fn tail_bound(&self, mode_ln: f64, floor: f64, direction: f64) -> Option<f64> {
        let mut inside = mode_ln;
        let mut step = 1e-3;
        loop {
            let probe = inside + direction * step;
            if !(-700.0..=700.0).contains(&probe) {
                return None;
            }
            if self.log_density(probe.exp()) < floor {
                let (mut a, mut b) = (inside, probe);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if self.log_density(m.exp()) < floor {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                return Some(b.exp());
            }
            inside = probe;
            step *= 2.0;
        }
    }

    fn density_in_s(&self, s: f64) -> f64 {
        let delta = self.delta_of(s);
        if delta <= 0.0 && self.alpha0 > self.power {
            return 0.0;
        }
        (self.log_density(delta) - self.log_peak).exp()
    }

    /// `E[f(delta) | y]` with relative tolerance 1e-8.
    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let opts = QuadOptions::default();
        let mass = |a: f64, b: f64| integrate(|s| self.density_in_s(s), a, b, opts);
        let z = mass(self.s_lo, self.s_mode)?.value + mass(self.s_mode, self.s_hi)?.value;
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::Quadrature(format!("normaliser is {z}")));
        }
        let num_opts = QuadOptions {
            abs_tol: 1e-13 * z,
            ..opts
        };
        let moment = |a: f64, b: f64| {
            integrate(|s| self.density_in_s(s) * f(self.delta_of(s)), a, b, num_opts)
        };
        let num = moment(self.s_lo, self.s_mode)?.value + moment(self.s_mode, self.s_hi)?.value;
        Ok(num / z)
    }

    fn inverse_cdf_table(&self, cells: usize) -> Result<InverseCdfTable> {
        // half the cells on each side of the mode
        let half = cells / 2;
        let mut nodes = Vec::with_capacity(cells + 1);
        for i in 0..half {
            nodes.push(self.s_lo + (self.s_mode - self.s_lo) * i as f64 / half as f64);
        }
        for i in 0..=(cells - half) {
            nodes.push(self.s_mode + (self.s_hi - self.s_mode) * i as f64 / (cells - half) as f64);
        }
        let mut cdf = Vec::with_capacity(nodes.len());
        cdf.push(0.0);
        let opts = QuadOptions {
            rel_tol: 1e-10,
            ..QuadOptions::default()
        };
        for w in nodes.windows(2) {
            let m = integrate(|s| self.density_in_s(s), w[0], w[1], opts)?.value;
            cdf.push(cdf.last().unwrap() + m);
        }
        let total = *cdf.last().unwrap();
        if !(total > 0.0) {
            return Err(Error::Quadrature("posterior mass vanished on the sampling grid".into()));
        }
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Ok(InverseCdfTable {
            nodes,
            cdf,
            power: self.power,
        })
    }
}

#[derive(Clone, Debug)]
struct InverseCdfTable {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
    power: f64,
}

impl InverseCdfTable {
    fn delta(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        let s = self.nodes[i - 1] + frac * (self.nodes[i] - self.nodes[i - 1]);
        if self.power == 1.0 {
            s
        } else {
            s.powf(self.power.recip())
        }
    }
}

/// Independent draws from the level-`l` posterior: `delta` by inverse CDF on
/// a quadrature table, then `u | delta, y` from its Gaussian conditional.
#[derive(Clone, Debug)]
pub struct ExactPosteriorSampler {
    model: HierGaussModel,
    level: usize,
    table: InverseCdfTable,
}

impl ExactPosteriorSampler {
    pub fn draw(&self, stream: &mut RngStream) -> Result<HierState> {
        let delta = self.table.delta(stream.draw_uniform());
        let cond = self.model.u_conditional(self.level, delta)?;
        let u = cond
            .mean
            .iter()
            .zip(&cond.variance)
            .map(|(m, v)| m + v.sqrt() * stream.draw_gaussian())
            .collect();
        Ok(HierState { u, delta })
    }
}
