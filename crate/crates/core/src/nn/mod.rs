//! A small CPU tensor-layer stack with hand-written backward passes.
//!
//! Activations are `(batch, channels, height, width)` arrays. Layers cache what
//! they need during [`Layer::forward_train`] and accumulate parameter
//! gradients in [`Layer::backward`]; [`Layer::forward`] is the cache-free
//! inference path and only needs `&self`. Per-sample work fans out through
//! [`crate::exec`], and per-sample gradient contributions are summed in batch
//! order.

mod conv;
mod layers;
mod resnet;

use ndarray::{Array3, Array4, ArrayD, Axis, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

pub use conv::Conv2d;
pub use layers::{AddCoords, BatchNorm2d, Linear, MaxPool2d, Relu};
pub use resnet::{resnet50, toy_cnn, Bottleneck, Sequential};

/// A named tensor plus its accumulated gradient. Buffers such as batch-norm
/// running statistics are `trainable = false`: they are checkpointed but never
/// updated by the optimizer.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, value: ArrayD<f64>) -> Self {
        Self {
            trainable: false,
            ..Self::new(name, value)
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

pub trait Layer: Send + Sync {
    fn forward(&self, x: &Array4<f64>) -> Array4<f64>;

    /// Like [`Layer::forward`] but keeps whatever the backward pass needs.
    fn forward_train(&mut self, x: &Array4<f64>) -> Array4<f64>;

    /// Accumulates parameter gradients and returns the input gradient. Must
    /// follow a [`Layer::forward_train`] call.
    fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

/// Kaiming-normal initialization for ReLU networks.
pub(crate) fn kaiming_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> ArrayD<f64> {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> ArrayD<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

pub(crate) fn stack_batch(samples: Vec<Array3<f64>>) -> Array4<f64> {
    let views: Vec<_> = samples.iter().map(|s| s.view()).collect();
    ndarray::stack(Axis(0), &views).expect("samples share a shape")
}

/// Mean over the spatial axes: `(n, c, h, w) -> (n, c)`.
pub fn global_avg_pool(x: &Array4<f64>) -> ndarray::Array2<f64> {
    let (n, c, h, w) = x.dim();
    let flat = x.view().into_shape_with_order((n, c, h * w)).expect("contiguous");
    flat.sum_axis(Axis(2)) / (h * w) as f64
}

pub fn global_avg_pool_backward(grad: &ndarray::Array2<f64>, spatial: (usize, usize)) -> Array4<f64> {
    let (n, c) = grad.dim();
    let (h, w) = spatial;
    let scale = 1.0 / (h * w) as f64;
    Array4::from_shape_fn((n, c, h, w), |(i, j, _, _)| grad[[i, j]] * scale)
}
