//! Fully connected layer.

use super::init;
use super::Param;
use crate::num::Scalar;
use ndarray::{Array2, ArrayView2, Axis, Ix1, Ix2};
use rand_chacha::ChaCha8Rng;

/// `y = x W^T + b`, input `(n, in_dim)`, output `(n, out_dim)`.
#[derive(Debug, Clone)]
pub struct Linear<F: Scalar> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    cached_input: Option<Array2<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = init::linear_weight::<F>(rng, out_dim, in_dim);
        let b = init::linear_bias::<F>(rng, out_dim, in_dim);
        Self {
            weight: Param::new(format!("{name}.weight"), w.into_dyn()),
            bias: Param::new(format!("{name}.bias"), b.into_dyn()),
            cached_input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&mut self, x: &ArrayView2<'_, F>) -> Array2<F> {
        assert_eq!(x.ncols(), self.in_dim(), "linear input width");
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = x.dot(&w.t());
        y += &b;
        self.cached_input = Some(x.to_owned());
        y
    }

    /// Accumulates `dW`, `db`; returns `dx`.
    pub fn backward(&mut self, dy: &ArrayView2<'_, F>) -> Array2<F> {
        let x = self
            .cached_input
            .as_ref()
            .expect("backward before forward");
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let dw = dy.t().dot(x);
        let db = dy.sum_axis(Axis(0));
        let dx = dy.dot(&w);
        self.weight
            .grad
            .view_mut()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .scaled_add(F::one(), &dw);
        self.bias
            .grad
            .view_mut()
            .into_dimensionality::<Ix1>()
            .unwrap()
            .scaled_add(F::one(), &db);
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
