//! Fully connected encoder/classifier.

use super::{Arch, Model};
use crate::nn::{Linear, Param, Relu};
use crate::num::Scalar;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4};
use rand_chacha::ChaCha8Rng;

/// Flatten, then hidden `Linear -> ReLU` stages (the last hidden output is
/// the latent `z`), then a linear classifier.
pub struct Mlp<F: Scalar> {
    hidden: Vec<Linear<F>>,
    relus: Vec<Relu<F>>,
    classifier: Linear<F>,
    input_dim: usize,
    num_classes: usize,
    cached_shape: Option<(usize, usize, usize, usize)>,
}

impl<F: Scalar> Mlp<F> {
    pub fn new(
        input_dim: usize,
        hidden_dims: &[usize],
        num_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(!hidden_dims.is_empty(), "mlp needs at least one hidden layer");
        let mut hidden = Vec::with_capacity(hidden_dims.len());
        let mut relus = Vec::with_capacity(hidden_dims.len());
        let mut prev = input_dim;
        for (i, &dim) in hidden_dims.iter().enumerate() {
            hidden.push(Linear::new(&format!("encoder.fc{}", i + 1), prev, dim, rng));
            relus.push(Relu::new());
            prev = dim;
        }
        let classifier = Linear::new("classifier", prev, num_classes, rng);
        Self {
            hidden,
            relus,
            classifier,
            input_dim,
            num_classes,
            cached_shape: None,
        }
    }
}

impl<F: Scalar> Model<F> for Mlp<F> {
    fn forward_split(&mut self, x: &ArrayView4<'_, F>, _train: bool) -> (Array2<F>, Array2<F>) {
        let (n, c, h, w) = x.dim();
        assert_eq!(
            c * h * w,
            self.input_dim,
            "mlp expects flattened width {}, got {}x{}x{}",
            self.input_dim,
            c,
            h,
            w
        );
        self.cached_shape = Some((n, c, h, w));
        let flat = x
            .to_owned()
            .into_shape((n, c * h * w))
            .expect("contiguous input");
        let mut cur = flat;
        for (fc, relu) in self.hidden.iter_mut().zip(self.relus.iter_mut()) {
            let pre = fc.forward(&cur.view());
            cur = relu
                .forward(&pre.into_dyn())
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
        }
        let z = cur;
        let logits = self.classifier.forward(&z.view());
        (z, logits)
    }

    fn backward(
        &mut self,
        d_logits: &ArrayView2<'_, F>,
        d_z: Option<&ArrayView2<'_, F>>,
    ) -> Array4<F> {
        let mut d = self.classifier.backward(d_logits);
        if let Some(extra) = d_z {
            d += extra;
        }
        for (fc, relu) in self.hidden.iter_mut().zip(self.relus.iter_mut()).rev() {
            let through_relu = relu
                .backward(&d.into_dyn())
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            d = fc.backward(&through_relu.view());
        }
        let (n, c, h, w) = self.cached_shape.expect("backward before forward");
        d.into_shape((n, c, h, w)).expect("contiguous gradient")
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = Vec::new();
        for fc in &mut self.hidden {
            out.extend(fc.params_mut());
        }
        out.extend(self.classifier.params_mut());
        out
    }

    fn running_stats_mut(&mut self) -> Vec<(String, &mut Array1<f64>)> {
        Vec::new()
    }

    fn latent_dim(&self) -> usize {
        self.classifier.in_dim()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn arch(&self) -> Arch {
        Arch::Mlp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    #[test]
    fn default_widths_match_contract() {
        let mut rng = crate::rng::stream(31, "test/mlp");
        let mut m = Mlp::<f32>::new(2352, &[1024, 512, 256], 10, &mut rng);
        assert_eq!(m.latent_dim(), 256);
        assert_eq!(m.num_classes(), 10);
        // 3 hidden + classifier, each with weight + bias
        assert_eq!(m.params_mut().len(), 8);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let mut rng = crate::rng::stream(32, "test/mlp-bad");
        let mut m = Mlp::<f32>::new(48, &[8], 3, &mut rng);
        let x = Array4::<f32>::zeros((1, 3, 4, 5));
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            m.forward_split(&x.view(), false)
        }));
        assert!(result.is_err());
    }

    #[test]
    fn input_gradient_shape_round_trips() {
        let mut rng = crate::rng::stream(33, "test/mlp-grad");
        let mut m = Mlp::<f64>::new(27, &[10], 4, &mut rng);
        let x = Array4::from_shape_fn((2, 3, 3, 3), |_| rng.gen_range(0.0..1.0));
        let (_, logits) = m.forward_split(&x.view(), true);
        let d = logits.mapv(|_| 1.0);
        let dx = m.backward(&d.view(), None);
        assert_eq!(dx.dim(), x.dim());
    }
}
