//! Minimal CPU neural-network layers with exact backpropagation.
//!
//! Activations are channels-last `Array3<T>` (height, width, channel).
//! Layers own their parameters and cache whatever the backward pass needs;
//! `forward` then `backward` must be called in matching pairs. Everything is
//! deterministic: no threading, fixed iteration order.

mod act;
mod adamw;
mod conv;
mod norm;

pub use act::{
    gelu, gelu_backward, relu6, relu6_backward, sigmoid, sigmoid_backward, softmax_channels,
    softmax_channels_backward,
};
pub use adamw::AdamW;
pub use conv::{Conv2d, DepthwiseConv2d};
pub use norm::LayerNorm;

use crate::scalar::{real, Real};
use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;

/// A trainable tensor together with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: ArrayD<T>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Param::new(ArrayD::zeros(shape.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Visitor over named parameters, used by the optimizer, checkpointing and
/// parameter counting. Layers must visit in a stable order.
pub type ParamVisitor<'a, T> = dyn FnMut(&str, &mut Param<T>) + 'a;

/// Standard normal via Box–Muller, resampled to ±2σ (truncated normal).
pub fn truncated_normal<T: Real>(rng: &mut ChaCha8Rng, sigma: f64, shape: &[usize]) -> ArrayD<T> {
    use rand::Rng;
    let mut sample = || loop {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return z * sigma;
        }
    };
    ArrayD::from_shape_simple_fn(shape.to_vec(), || real::<T>(sample()))
}
