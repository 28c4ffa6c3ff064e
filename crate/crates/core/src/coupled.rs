//! Fine/coarse chain pairs driven by shared innovations.
//!
//! Innovations are always drawn in the fine kernel's layout. The coarse
//! kernel sees the prefix of every Gaussian vector and the same scalar
//! uniforms and Gamma variates, so the fine chain of a coupled run consumes
//! its stream exactly as a solo run of the fine kernel would.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{check_compatible, InnovationKind, InnovationRecord, IteratedMapKernel};
use crate::rng::RngStream;
use crate::stats::{batch_means, MeanEstimate, DEFAULT_BATCHES};

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledState {
    pub fine: Vec<f64>,
    pub coarse: Vec<f64>,
    pub step_index: u64,
}

impl CoupledState {
    /// Both chains start at `x0`; the coarse chain gets its projection.
    pub fn start<C: IteratedMapKernel + ?Sized>(coarse_kernel: &C, x0: &[f64]) -> Self {
        Self {
            fine: x0.to_vec(),
            coarse: coarse_kernel.project(x0),
            step_index: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementSample {
    pub value: f64,
    pub step_index: u64,
}

/// Scalar work charged for the coarse kernel re-applying shared Gaussian
/// coordinates. Shared uniforms and Gamma variates are not charged twice.
fn coarse_reuse_cost(layout: &[InnovationKind]) -> u64 {
    layout
        .iter()
        .map(|k| match k {
            InnovationKind::GaussianVector(n) => *n as u64,
            _ => 0,
        })
        .sum()
}

fn step_pair<F, C>(
    fine_kernel: &F,
    coarse_kernel: &C,
    s: &CoupledState,
    stream: &mut RngStream,
) -> Result<(CoupledState, u64)>
where
    F: IteratedMapKernel + ?Sized,
    C: IteratedMapKernel + ?Sized,
{
    let coarse_layout = coarse_kernel.innovation_layout();
    let record = InnovationRecord::draw(fine_kernel.innovation_layout(), stream)?;
    let fine = fine_kernel.apply(&s.fine, &record.items)?;
    let coarse = coarse_kernel.apply(&s.coarse, &record.restrict(coarse_layout)?)?;
    let cost = record.draws + coarse_reuse_cost(coarse_layout);
    Ok((
        CoupledState {
            fine,
            coarse,
            step_index: s.step_index + 1,
        },
        cost,
    ))
}

/// Advance both chains one step on one innovation record. Returns the new
/// pair and the cost of the step.
pub fn coupled_step<F, C>(
    fine_kernel: &F,
    coarse_kernel: &C,
    s: &CoupledState,
    stream: &mut RngStream,
) -> Result<(CoupledState, u64)>
where
    F: IteratedMapKernel + ?Sized,
    C: IteratedMapKernel + ?Sized,
{
    check_compatible(fine_kernel.innovation_layout(), coarse_kernel.innovation_layout())?;
    step_pair(fine_kernel, coarse_kernel, s, stream)
}

/// Output of a coupled run of `n` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledRun {
    pub increments: Vec<IncrementSample>,
    /// `phi` along the fine chain, aligned with `increments`.
    pub fine_phi: Vec<f64>,
    pub cost: u64,
    pub final_state: CoupledState,
}

impl CoupledRun {
    pub fn increment_values(&self) -> Vec<f64> {
        self.increments.iter().map(|s| s.value).collect()
    }
}

/// Run the pair for `n_steps` from `x0` and record `phi(fine) - phi(coarse)`
/// after every step.
pub fn coupled_trajectory<F, C, P>(
    fine_kernel: &F,
    coarse_kernel: &C,
    x0: &[f64],
    n_steps: usize,
    stream: &mut RngStream,
    phi: P,
) -> Result<CoupledRun>
where
    F: IteratedMapKernel + ?Sized,
    C: IteratedMapKernel + ?Sized,
    P: Fn(&[f64]) -> f64,
{
    check_compatible(fine_kernel.innovation_layout(), coarse_kernel.innovation_layout())?;
    let mut state = CoupledState::start(coarse_kernel, x0);
    let mut increments = Vec::with_capacity(n_steps);
    let mut fine_phi = Vec::with_capacity(n_steps);
    let mut cost = 0;
    for _ in 0..n_steps {
        let (next, c) = step_pair(fine_kernel, coarse_kernel, &state, stream)?;
        cost += c;
        let pf = phi(&next.fine);
        let value = pf - phi(&next.coarse);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                level: fine_kernel.level(),
            });
        }
        increments.push(IncrementSample {
            value,
            step_index: next.step_index,
        });
        fine_phi.push(pf);
        state = next;
    }
    Ok(CoupledRun {
        increments,
        fine_phi,
        cost,
        final_state: state,
    })
}

/// Mean of the increments after discarding the first `burn_in`, with a
/// 32-batch batch-means standard error.
pub fn increment_mean(samples: &[f64], burn_in: usize) -> Result<MeanEstimate> {
    if burn_in >= samples.len() {
        return Err(Error::EmptySample(format!(
            "burn-in {burn_in} leaves nothing of {} samples",
            samples.len()
        )));
    }
    batch_means(&samples[burn_in..], DEFAULT_BATCHES)
}
