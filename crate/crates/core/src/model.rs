//! The interface a multilevel model exposes to the estimator and diagnostics.

use crate::error::Result;
use crate::kernel::IteratedMapKernel;
use crate::rng::RngStream;

/// A family of targets `pi_0, pi_1, ...` with kernels, a test function and a
/// resolution schedule `1 > h_0 > h_1 > ... > 0`.
pub trait MultilevelModel: Send + Sync {
    type Kernel: IteratedMapKernel;

    /// Short identifier recorded in manifests.
    fn id(&self) -> String;

    fn max_level(&self) -> usize;

    fn h(&self, level: usize) -> f64;

    fn kernel(&self, level: usize) -> Result<Self::Kernel>;

    /// Starting point of every chain at `level`.
    fn initial_state(&self, level: usize) -> Vec<f64>;

    fn phi(&self, state: &[f64]) -> f64;

    /// A random state from a model-supplied box, used by the assumption probes.
    fn probe_state(&self, level: usize, stream: &mut RngStream) -> Vec<f64>;

    /// `pi_level(phi)` computed independently of the chains, when available.
    fn reference_value(&self, _level: usize) -> Option<Result<f64>> {
        None
    }

    fn h_schedule(&self) -> Vec<f64> {
        (0..=self.max_level()).map(|l| self.h(l)).collect()
    }
}
