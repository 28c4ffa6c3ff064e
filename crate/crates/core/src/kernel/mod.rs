//! Markov kernels written as iterated maps `x' = xi_l(x, u)`.
//!
//! A kernel declares the layout of the innovation `u` it consumes per step.
//! Drawing the innovation and applying the map are separate so that two
//! kernels can be driven by one realised innovation (see [`crate::coupled`]).

mod gibbs;
mod mh;
mod synthetic;

pub use gibbs::{gibbs_sweep_step, ConditionalMap, GibbsKernel};
pub use mh::{mh_acceptance_probability, mh_map_step, MhKernel, TargetDensity};
pub use synthetic::{synthetic_target, SyntheticModel, SyntheticTarget, SYNTHETIC_BOUND, SYNTHETIC_SCALE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// One entry of a kernel's innovation layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InnovationKind {
    Uniform,
    GaussianVector(usize),
    /// Gamma(shape, rate 1).
    Gamma(f64),
}

/// A realised innovation entry.
#[derive(Clone, Debug, PartialEq)]
pub enum Innovation {
    Uniform(f64),
    Gaussian(Vec<f64>),
    Gamma(f64),
}

/// The innovations for one step, with the number of stream words they used.
#[derive(Clone, Debug, PartialEq)]
pub struct InnovationRecord {
    pub items: Vec<Innovation>,
    pub draws: u64,
}

impl InnovationRecord {
    /// Draw every entry of `layout` in order.
    pub fn draw(layout: &[InnovationKind], stream: &mut RngStream) -> Result<Self> {
        let start = stream.position();
        let mut items = Vec::with_capacity(layout.len());
        for kind in layout {
            let item = match *kind {
                InnovationKind::Uniform => Innovation::Uniform(stream.draw_uniform()),
                InnovationKind::GaussianVector(n) => {
                    Innovation::Gaussian(stream.draw_gaussian_vector(n))
                }
                InnovationKind::Gamma(shape) => Innovation::Gamma(stream.draw_gamma(shape)?),
            };
            items.push(item);
        }
        Ok(Self {
            items,
            draws: stream.position() - start,
        })
    }

    /// The view of this record seen by a kernel with the (compatible, no
    /// larger) `layout`: Gaussian vectors are cut to their prefix, scalar
    /// entries are shared as-is.
    pub fn restrict(&self, layout: &[InnovationKind]) -> Result<Vec<Innovation>> {
        if layout.len() != self.items.len() {
            return Err(Error::Config(format!(
                "innovation layouts have {} and {} entries",
                self.items.len(),
                layout.len()
            )));
        }
        self.items
            .iter()
            .zip(layout)
            .map(|(item, kind)| match (item, kind) {
                (Innovation::Uniform(u), InnovationKind::Uniform) => Ok(Innovation::Uniform(*u)),
                (Innovation::Gamma(w), InnovationKind::Gamma(_)) => Ok(Innovation::Gamma(*w)),
                (Innovation::Gaussian(v), InnovationKind::GaussianVector(n)) if *n <= v.len() => {
                    Ok(Innovation::Gaussian(v[..*n].to_vec()))
                }
                (item, kind) => Err(Error::Config(format!(
                    "innovation {item:?} cannot drive a kernel expecting {kind:?}"
                ))),
            })
            .collect()
    }
}

/// Check that a coarse kernel can be driven by innovations drawn for a fine
/// kernel: same entry kinds in the same order, equal Gamma shapes, and no
/// Gaussian vector longer than its fine counterpart.
pub fn check_compatible(fine: &[InnovationKind], coarse: &[InnovationKind]) -> Result<()> {
    if fine.len() != coarse.len() {
        return Err(Error::Config(format!(
            "fine kernel draws {} innovation entries, coarse kernel {}",
            fine.len(),
            coarse.len()
        )));
    }
    for (i, (f, c)) in fine.iter().zip(coarse).enumerate() {
        let ok = match (f, c) {
            (InnovationKind::Uniform, InnovationKind::Uniform) => true,
            (InnovationKind::Gamma(a), InnovationKind::Gamma(b)) => a == b,
            (InnovationKind::GaussianVector(n), InnovationKind::GaussianVector(m)) => m <= n,
            _ => false,
        };
        if !ok {
            return Err(Error::Config(format!(
                "innovation entry {i} incompatible: fine {f:?}, coarse {c:?}"
            )));
        }
    }
    Ok(())
}

/// A level-indexed Markov transition `x' = xi_l(x, u)`.
pub trait IteratedMapKernel: Send + Sync {
    fn level(&self) -> usize;

    fn state_dim(&self) -> usize;

    fn innovation_layout(&self) -> &[InnovationKind];

    /// Apply the map to `x` with realised innovations matching the layout.
    fn apply(&self, x: &[f64], innovations: &[Innovation]) -> Result<Vec<f64>>;

    /// Restrict a state from a nested finer space to this kernel's space.
    fn project(&self, finer: &[f64]) -> Vec<f64> {
        finer[..self.state_dim()].to_vec()
    }

    /// Embed a state from a nested coarser space into this kernel's space,
    /// zero-filling the coordinates the coarser space lacks.
    fn embed(&self, coarser: &[f64]) -> Vec<f64> {
        let mut x = coarser.to_vec();
        x.resize(self.state_dim(), 0.0);
        x
    }

    /// Draw one innovation record and apply the map. Returns the new state
    /// and the number of scalar draws consumed.
    fn step(&self, x: &[f64], stream: &mut RngStream) -> Result<(Vec<f64>, u64)> {
        let record = InnovationRecord::draw(self.innovation_layout(), stream)?;
        Ok((self.apply(x, &record.items)?, record.draws))
    }
}

impl<K: IteratedMapKernel + ?Sized> IteratedMapKernel for &K {
    fn level(&self) -> usize {
        (**self).level()
    }
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn innovation_layout(&self) -> &[InnovationKind] {
        (**self).innovation_layout()
    }
    fn apply(&self, x: &[f64], innovations: &[Innovation]) -> Result<Vec<f64>> {
        (**self).apply(x, innovations)
    }
    fn project(&self, finer: &[f64]) -> Vec<f64> {
        (**self).project(finer)
    }
    fn embed(&self, coarser: &[f64]) -> Vec<f64> {
        (**self).embed(coarser)
    }
}

/// States `x_1..x_n` of a chain (x_0 excluded) and the draws they cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub cost: u64,
}

pub fn iterate<K: IteratedMapKernel + ?Sized>(
    kernel: &K,
    x0: &[f64],
    n_steps: usize,
    stream: &mut RngStream,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(n_steps);
    let (_, cost) = run_chain(kernel, x0, n_steps, stream, |x| states.push(x.to_vec()))?;
    Ok(Trajectory { states, cost })
}

/// Run `n_steps` of the chain, handing each new state to `visit` without
/// storing it. Returns the final state and the draw count.
pub fn run_chain<K, F>(
    kernel: &K,
    x0: &[f64],
    n_steps: usize,
    stream: &mut RngStream,
    mut visit: F,
) -> Result<(Vec<f64>, u64)>
where
    K: IteratedMapKernel + ?Sized,
    F: FnMut(&[f64]),
{
    let mut x = x0.to_vec();
    let mut cost = 0;
    for _ in 0..n_steps {
        let (next, draws) = kernel.step(&x, stream)?;
        cost += draws;
        visit(&next);
        x = next;
    }
    Ok((x, cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, StreamPurpose};

    #[test]
    fn restrict_cuts_gaussian_prefix_and_shares_scalars() {
        let mut s = derive_stream(1, StreamPurpose::LevelPair, 1, 0);
        let fine = [InnovationKind::GaussianVector(4), InnovationKind::Uniform, InnovationKind::Gamma(1.0)];
        let coarse = [InnovationKind::GaussianVector(2), InnovationKind::Uniform, InnovationKind::Gamma(1.0)];
        let rec = InnovationRecord::draw(&fine, &mut s).unwrap();
        assert_eq!(rec.draws, 6);
        let view = rec.restrict(&coarse).unwrap();
        match (&rec.items[0], &view[0]) {
            (Innovation::Gaussian(f), Innovation::Gaussian(c)) => assert_eq!(&f[..2], &c[..]),
            _ => panic!("layout mismatch"),
        }
        assert_eq!(rec.items[1], view[1]);
        assert_eq!(rec.items[2], view[2]);
    }

    #[test]
    fn incompatible_layouts_are_config_errors() {
        let fine = [InnovationKind::GaussianVector(4), InnovationKind::Uniform];
        assert!(check_compatible(&fine, &[InnovationKind::GaussianVector(5), InnovationKind::Uniform]).is_err());
        assert!(check_compatible(&fine, &[InnovationKind::Uniform, InnovationKind::Uniform]).is_err());
        assert!(check_compatible(&fine, &[InnovationKind::GaussianVector(1)]).is_err());
        assert!(check_compatible(&[InnovationKind::Gamma(1.0)], &[InnovationKind::Gamma(2.0)]).is_err());
        assert!(check_compatible(&fine, &[InnovationKind::GaussianVector(3), InnovationKind::Uniform]).is_ok());
    }
}
