//! Counter-based random streams.
//!
//! Every draw in the pipeline comes from a ChaCha stream selected by
//! `(seed, stream-id)`. Stream ids pack the layer, the denoising step and the
//! feature role, so the draws a layer sees never depend on which thread ran
//! it or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Mask};
use crate::scalar::Scalar;

/// What a stream is used for. Distinct roles never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum StreamRole {
    QueryRemoval = 1,
    KeyRemoval = 2,
    SourceLatent = 3,
    Weights = 4,
    TokenEmbedding = 5,
    Test = 0xff,
}

/// Identifies one independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub layer: u32,
    pub step: u32,
    pub role: StreamRole,
}

impl StreamKey {
    pub fn new(layer: usize, step: usize, role: StreamRole) -> Self {
        Self { layer: layer as u32, step: step as u32, role }
    }

    /// Packs the key into a 64-bit ChaCha stream id: 24 bits of layer,
    /// 24 bits of step, 16 bits of role.
    pub fn stream_id(&self) -> u64 {
        ((self.layer as u64 & 0xff_ffff) << 40) | ((self.step as u64 & 0xff_ffff) << 16) | self.role as u64
    }
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn for_key(seed: u64, key: StreamKey) -> Self {
        Self::new(seed, key.stream_id())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_grid<T: Scalar>(&mut self, height: usize, width: usize, channels: usize) -> Result<FeatureGrid<T>> {
        FeatureGrid::from_fn(height, width, channels, |_, _, _| T::lit(self.normal()))
    }
}

/// Binary mask whose cells are independently one with probability `r`.
pub fn bernoulli_mask<T: Scalar>(height: usize, width: usize, r: T, rng: &mut SeededRng) -> Result<Mask<T>> {
    if !(r >= T::zero() && r <= T::one()) {
        return Err(Error::Parameter(format!("Bernoulli probability {r} outside [0, 1]")));
    }
    let p = r.as_f64();
    Mask::from_fn(height, width, |_, _| if rng.uniform() < p { T::one() } else { T::zero() })
}
