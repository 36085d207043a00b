//! Seeded synthetic stand-ins for the backbone/FPN/RoIAlign outputs.

use crate::rng::normal_tensor;
use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("zero-size extent in synthetic sizes")]
    ZeroExtent,
    #[error("pyramid levels must halve: {0:?}")]
    NotHalving([usize; 4]),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Spatial extents for p2-p5 plus the RoI batch geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sizes {
    pub levels: [usize; 4],
    pub n: usize,
    pub d: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Sizes {
            levels: [64, 32, 16, 8],
            n: 1024,
            d: 1024,
        }
    }
}

/// Four 256-channel pyramid maps plus an RoI batch of `[n, 256, 7, 7]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub pyramid: [Tensor; 4],
    pub rois: Tensor,
}

pub fn gen_synthetic(seed: u64, sizes: &Sizes) -> Result<Synthetic, SynthError> {
    if sizes.n == 0 || sizes.d == 0 || sizes.levels.iter().any(|&l| l == 0) {
        return Err(SynthError::ZeroExtent);
    }
    for w in sizes.levels.windows(2) {
        if w[1] * 2 != w[0] {
            return Err(SynthError::NotHalving(sizes.levels));
        }
    }
    let names = ["p2", "p3", "p4", "p5"];
    let pyramid = std::array::from_fn(|i| {
        normal_tensor(seed, names[i], vec![256, sizes.levels[i], sizes.levels[i]])
    });
    let rois = normal_tensor(seed, "rois", vec![sizes.n, 256, 7, 7]);
    Ok(Synthetic { pyramid, rois })
}
