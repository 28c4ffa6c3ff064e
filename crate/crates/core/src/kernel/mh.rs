use crate::error::{Error, Result};
use crate::kernel::{Innovation, InnovationKind, InnovationRecord, IteratedMapKernel};
use crate::rng::RngStream;

/// An unnormalised log-density known up to a constant.
pub trait TargetDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn in_support(&self, x: &[f64]) -> bool;

    /// Log-density on the support; only called for points in the support.
    fn log_density(&self, x: &[f64]) -> f64;
}

/// Acceptance probability of a symmetric random-walk move from `x` to `y`.
/// Zero when `y` leaves the support.
pub fn mh_acceptance_probability<T: TargetDensity + ?Sized>(target: &T, x: &[f64], y: &[f64]) -> f64 {
    if !target.in_support(y) {
        return 0.0;
    }
    let ratio = (target.log_density(y) - target.log_density(x)).exp();
    ratio.min(1.0)
}

fn mh_map<T: TargetDensity + ?Sized>(
    target: &T,
    scale: f64,
    x: &[f64],
    perturbation: &[f64],
    u: f64,
) -> Result<Vec<f64>> {
    if !target.in_support(x) || !target.log_density(x).is_finite() {
        return Err(Error::Precondition(format!(
            "current state {x:?} has no finite log-density"
        )));
    }
    let proposal: Vec<f64> = x
        .iter()
        .zip(perturbation)
        .map(|(xi, zi)| xi + scale * zi)
        .collect();
    if u < mh_acceptance_probability(target, x, &proposal) {
        Ok(proposal)
    } else {
        Ok(x.to_vec())
    }
}

/// One Gaussian random-walk Metropolis-Hastings step: draws a standard normal
/// vector of the target's dimension, then one uniform for the accept test.
pub fn mh_map_step<T: TargetDensity + ?Sized>(
    target: &T,
    proposal_scale: f64,
    x: &[f64],
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    let perturbation = stream.draw_gaussian_vector(target.dim());
    let u = stream.draw_uniform();
    mh_map(target, proposal_scale, x, &perturbation, u)
}

/// Random-walk MH as an iterated map on a fixed-dimension target.
#[derive(Clone, Debug)]
pub struct MhKernel<T> {
    level: usize,
    target: T,
    scale: f64,
    layout: [InnovationKind; 2],
}

impl<T: TargetDensity> MhKernel<T> {
    pub fn new(level: usize, target: T, proposal_scale: f64) -> Result<Self> {
        if !(proposal_scale > 0.0) || !proposal_scale.is_finite() {
            return Err(Error::Domain(format!(
                "proposal scale must be positive, got {proposal_scale}"
            )));
        }
        let layout = [InnovationKind::GaussianVector(target.dim()), InnovationKind::Uniform];
        Ok(Self {
            level,
            target,
            scale: proposal_scale,
            layout,
        })
    }

    pub fn target(&self) -> &T {
        &self.target
    }

    pub fn proposal_scale(&self) -> f64 {
        self.scale
    }
}

impl<T: TargetDensity> IteratedMapKernel for MhKernel<T> {
    fn level(&self) -> usize {
        self.level
    }

    fn state_dim(&self) -> usize {
        self.target.dim()
    }

    fn innovation_layout(&self) -> &[InnovationKind] {
        &self.layout
    }

    fn apply(&self, x: &[f64], innovations: &[Innovation]) -> Result<Vec<f64>> {
        match innovations {
            [Innovation::Gaussian(z), Innovation::Uniform(u)] if z.len() == self.target.dim() => {
                mh_map(&self.target, self.scale, x, z, *u)
            }
            _ => Err(Error::Config(format!(
                "MH kernel expects {:?}, got {innovations:?}",
                self.layout
            ))),
        }
    }

    fn step(&self, x: &[f64], stream: &mut RngStream) -> Result<(Vec<f64>, u64)> {
        let record = InnovationRecord::draw(&self.layout, stream)?;
        Ok((self.apply(x, &record.items)?, record.draws))
    }
}
