//! Minimal trainable network engine: sequential conv/dense stacks with
//! exact gradients, plain SGD, and MAC / parameter-size accounting.

mod arch;
mod engine;
mod params;
mod scalar;
mod tensor;
pub mod templates;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use arch::{Architecture, LayerSpec, Padding, Shape3, BYTES_PER_PARAM};
pub use engine::{argmax_rows, evaluate, forward, logits, loss_and_grad};
pub use params::{sgd_step, weighted_mean, GradientDelta, LayerParams, Parameters};
pub use scalar::Scalar;
pub use tensor::Tensor;

use crate::error::Result;

/// An architecture together with concrete weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub arch: Architecture,
    pub params: Parameters<f32>,
}

impl Model {
    pub fn new(arch: Architecture, params: Parameters<f32>) -> Result<Self> {
        params.check(&arch)?;
        Ok(Self { arch, params })
    }

    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let params = Parameters::init(&arch, rng);
        Self { arch, params }
    }

    pub fn macs(&self) -> u64 {
        self.arch.macs()
    }

    pub fn param_bytes(&self) -> u64 {
        self.arch.param_bytes()
    }
}
