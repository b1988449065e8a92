//! Minimal neural-network layers with explicit forward/backward passes.
//!
//! Layers cache whatever the backward pass needs, accumulate parameter
//! gradients in place, and return the gradient with respect to their
//! input, so attacks can differentiate through a frozen model. Everything
//! is generic over the scalar type: training runs at `f32`, finite-
//! difference verification at `f64`.

pub mod batchnorm;
pub mod conv;
pub mod init;
pub mod linear;
pub mod pool;
pub mod relu;
pub mod sgd;

pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use linear::Linear;
pub use pool::{global_avg_pool, global_avg_pool_backward, MaxPool2d};
pub use relu::Relu;
pub use sgd::{Scheduler, Sgd};

use crate::num::Scalar;
use ndarray::ArrayD;

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<F: Scalar> {
    pub name: String,
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
}

impl<F: Scalar> Param<F> {
    pub fn new(name: impl Into<String>, value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}
