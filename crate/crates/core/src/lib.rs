//! Multilevel Markov chain Monte Carlo with coupled iterated-map kernels.
//!
//! Chains at neighbouring resolution levels are driven by one shared
//! innovation sequence, and a telescoping sum of level increments estimates
//! the posterior expectation at the finest level.

pub mod coupled;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod hier;
pub mod kernel;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use coupled::{coupled_step, coupled_trajectory, increment_mean, CoupledRun, CoupledState, IncrementSample};
pub use error::{Error, Result};
pub use hier::{HierGaussModel, HierModelConfig};
pub use kernel::{Innovation, InnovationKind, IteratedMapKernel};
pub use model::MultilevelModel;
pub use rng::{derive_stream, RngStream, StreamKey, StreamPurpose};
