use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernel::{Innovation, InnovationKind, InnovationRecord, IteratedMapKernel};
use crate::rng::RngStream;

/// A per-block conditional sampler `T_{l,i}(x_{-i}, u_i)`.
pub trait ConditionalMap: Send + Sync {
    /// Coordinates of the state this block overwrites.
    fn block(&self) -> Range<usize>;

    fn innovation(&self) -> InnovationKind;

    /// Write a draw of the block into `out` given the rest of `state` (which
    /// already holds the updated earlier blocks).
    fn sample(&self, state: &[f64], innovation: &Innovation, out: &mut [f64])
        -> std::result::Result<(), String>;
}

fn check_partition(blocks: &[Arc<dyn ConditionalMap>], dim: usize) -> Result<()> {
    let mut covered = vec![false; dim];
    for (i, b) in blocks.iter().enumerate() {
        let r = b.block();
        if r.end > dim || r.is_empty() {
            return Err(Error::Config(format!("block {i} range {r:?} invalid for dimension {dim}")));
        }
        for c in r {
            if covered[c] {
                return Err(Error::Config(format!("coordinate {c} is updated by two blocks")));
            }
            covered[c] = true;
        }
    }
    if let Some(c) = covered.iter().position(|c| !c) {
        return Err(Error::Config(format!("coordinate {c} is not updated by any block")));
    }
    Ok(())
}

fn sweep(blocks: &[Arc<dyn ConditionalMap>], x: &[f64], innovations: &[Innovation]) -> Result<Vec<f64>> {
    if innovations.len() != blocks.len() {
        return Err(Error::Config(format!(
            "Gibbs sweep over {} blocks got {} innovations",
            blocks.len(),
            innovations.len()
        )));
    }
    let mut state = x.to_vec();
    let mut buf = Vec::new();
    for (i, (block, u)) in blocks.iter().zip(innovations).enumerate() {
        let range = block.block();
        buf.clear();
        buf.resize(range.len(), 0.0);
        block
            .sample(&state, u, &mut buf)
            .map_err(|message| Error::BlockSampler { block: i, message })?;
        state[range].copy_from_slice(&buf);
    }
    Ok(state)
}

/// One deterministic-scan sweep: blocks updated in ascending order, each
/// drawing its innovation from `stream` immediately before its update.
pub fn gibbs_sweep_step(
    blocks: &[Arc<dyn ConditionalMap>],
    x: &[f64],
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    let layout: Vec<InnovationKind> = blocks.iter().map(|b| b.innovation()).collect();
    let record = InnovationRecord::draw(&layout, stream)?;
    sweep(blocks, x, &record.items)
}

/// A deterministic-scan Gibbs sampler as an iterated map.
#[derive(Clone)]
pub struct GibbsKernel {
    level: usize,
    dim: usize,
    blocks: Vec<Arc<dyn ConditionalMap>>,
    layout: Vec<InnovationKind>,
}

impl GibbsKernel {
    pub fn new(level: usize, dim: usize, blocks: Vec<Arc<dyn ConditionalMap>>) -> Result<Self> {
        check_partition(&blocks, dim)?;
        let layout = blocks.iter().map(|b| b.innovation()).collect();
        Ok(Self {
            level,
            dim,
            blocks,
            layout,
        })
    }

    pub fn blocks(&self) -> &[Arc<dyn ConditionalMap>] {
        &self.blocks
    }
}

impl std::fmt::Debug for GibbsKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GibbsKernel")
            .field("level", &self.level)
            .field("dim", &self.dim)
            .field("layout", &self.layout)
            .finish()
    }
}

impl IteratedMapKernel for GibbsKernel {
    fn level(&self) -> usize {
        self.level
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn innovation_layout(&self) -> &[InnovationKind] {
        &self.layout
    }

    fn apply(&self, x: &[f64], innovations: &[Innovation]) -> Result<Vec<f64>> {
        sweep(&self.blocks, x, innovations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, StreamPurpose};

    struct Keep(Range<usize>);

    impl ConditionalMap for Keep {
        fn block(&self) -> Range<usize> {
            self.0.clone()
        }
        fn innovation(&self) -> InnovationKind {
            InnovationKind::Uniform
        }
        fn sample(&self, state: &[f64], _: &Innovation, out: &mut [f64]) -> std::result::Result<(), String> {
            out.copy_from_slice(&state[self.0.clone()]);
            Ok(())
        }
    }

    /// x ~ N(mean, 1) with no dependence on other coordinates.
    struct Normal {
        mean: f64,
    }

    impl ConditionalMap for Normal {
        fn block(&self) -> Range<usize> {
            0..1
        }
        fn innovation(&self) -> InnovationKind {
            InnovationKind::GaussianVector(1)
        }
        fn sample(&self, _: &[f64], u: &Innovation, out: &mut [f64]) -> std::result::Result<(), String> {
            match u {
                Innovation::Gaussian(z) => {
                    out[0] = self.mean + z[0];
                    Ok(())
                }
                _ => Err("expected a Gaussian".into()),
            }
        }
    }

    /// Copies the previous block plus one; fails when the variance it would
    /// use is non-positive.
    struct Follow;

    impl ConditionalMap for Follow {
        fn block(&self) -> Range<usize> {
            1..2
        }
        fn innovation(&self) -> InnovationKind {
            InnovationKind::Uniform
        }
        fn sample(&self, state: &[f64], _: &Innovation, out: &mut [f64]) -> std::result::Result<(), String> {
            if state[0] < 0.0 {
                return Err(format!("non-positive variance {}", state[0]));
            }
            out[0] = state[0] + 1.0;
            Ok(())
        }
    }

    #[test]
    fn identity_blocks_leave_state_unchanged() {
        let blocks: Vec<Arc<dyn ConditionalMap>> = vec![Arc::new(Keep(0..2)), Arc::new(Keep(2..3))];
        let mut s = derive_stream(0, StreamPurpose::Level0, 0, 0);
        let x = vec![0.1, -2.0, 7.0];
        assert_eq!(gibbs_sweep_step(&blocks, &x, &mut s).unwrap(), x);
        assert_eq!(s.position(), 2);
    }

    #[test]
    fn single_block_is_direct_sampling() {
        let blocks: Vec<Arc<dyn ConditionalMap>> = vec![Arc::new(Normal { mean: 3.0 })];
        let mut a = derive_stream(1, StreamPurpose::Level0, 0, 0);
        let mut b = derive_stream(1, StreamPurpose::Level0, 0, 0);
        let out = gibbs_sweep_step(&blocks, &[100.0], &mut a).unwrap();
        assert_eq!(out, vec![3.0 + b.draw_gaussian()]);
    }

    #[test]
    fn later_blocks_see_updated_earlier_blocks() {
        let blocks: Vec<Arc<dyn ConditionalMap>> = vec![Arc::new(Normal { mean: 50.0 }), Arc::new(Follow)];
        let kernel = GibbsKernel::new(0, 2, blocks).unwrap();
        let out = kernel
            .apply(&[0.0, 0.0], &[Innovation::Gaussian(vec![0.5]), Innovation::Uniform(0.3)])
            .unwrap();
        assert_eq!(out, vec![50.5, 51.5]);
    }

    #[test]
    fn block_failure_carries_index() {
        let blocks: Vec<Arc<dyn ConditionalMap>> = vec![Arc::new(Normal { mean: -50.0 }), Arc::new(Follow)];
        let mut s = derive_stream(2, StreamPurpose::Level0, 0, 0);
        match gibbs_sweep_step(&blocks, &[0.0, 0.0], &mut s) {
            Err(Error::BlockSampler { block, .. }) => assert_eq!(block, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn blocks_must_partition_state() {
        let overlap: Vec<Arc<dyn ConditionalMap>> = vec![Arc::new(Keep(0..2)), Arc::new(Keep(1..3))];
        assert!(GibbsKernel::new(0, 3, overlap).is_err());
        let gap: Vec<Arc<dyn ConditionalMap>> = vec![Arc::new(Keep(0..1))];
        assert!(GibbsKernel::new(0, 3, gap).is_err());
    }
}
