//! Rectified linear activation.

use crate::num::Scalar;
use ndarray::ArrayD;

/// Elementwise `max(0, x)` over tensors of any rank.
#[derive(Debug, Clone, Default)]
pub struct Relu<F: Scalar> {
    mask: Option<ArrayD<F>>,
}

impl<F: Scalar> Relu<F> {
    pub fn new() -> Self {
        Self { mask: None }
    }

    pub fn forward(&mut self, x: &ArrayD<F>) -> ArrayD<F> {
        let mask = x.mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: &ArrayD<F>) -> ArrayD<F> {
        let mask = self.mask.as_ref().expect("backward before forward");
        dy * mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn clamps_negatives_and_gates_gradients() {
        let mut relu = Relu::<f32>::new();
        let x = arr1(&[-1.0f32, 0.0, 2.5]).into_dyn();
        let y = relu.forward(&x);
        assert_eq!(y.as_slice().unwrap(), &[0.0, 0.0, 2.5]);
        let dy = arr1(&[1.0f32, 1.0, 1.0]).into_dyn();
        let dx = relu.backward(&dy);
        assert_eq!(dx.as_slice().unwrap(), &[0.0, 0.0, 1.0]);
    }
}
