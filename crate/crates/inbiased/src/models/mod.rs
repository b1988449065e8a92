//! Encoder/classifier models used by the trainers.
//!
//! Every model splits into an encoder `f` producing a latent vector `z`
//! and a linear classifier `g` producing logits, because the feature-
//! alignment loss couples the two paired networks at exactly that point.
//! The backward pass accepts an extra gradient injected at the latent, so
//! alignment terms reach encoder parameters without any autograd
//! machinery.

pub mod mlp;
pub mod resnet;

pub use mlp::Mlp;
pub use resnet::ResNet;

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::num::Scalar;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Supported architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Standard ResNet-18: 7x7 stride-2 stem with max-pool.
    Resnet18,
    /// Small-image ResNet-18: 3x3 stride-1 stem, no max-pool.
    Resnet18Cifar,
    /// Flatten plus three hidden layers (1024/512/256) and a linear head.
    Mlp,
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet18" => Ok(Arch::Resnet18),
            "resnet18_cifar" => Ok(Arch::Resnet18Cifar),
            "mlp" => Ok(Arch::Mlp),
            other => Err(Error::Config(format!(
                "unknown architecture `{other}` (expected resnet18, resnet18_cifar, or mlp)"
            ))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Arch::Resnet18 => "resnet18",
            Arch::Resnet18Cifar => "resnet18_cifar",
            Arch::Mlp => "mlp",
        };
        f.write_str(s)
    }
}

/// An encoder/classifier pair with explicit backward.
pub trait Model<F: Scalar>: Send {
    /// Forward pass returning the latent `z` and the logits `g(z)`.
    fn forward_split(&mut self, x: &ArrayView4<'_, F>, train: bool) -> (Array2<F>, Array2<F>);

    /// Backpropagate from the logits (and optionally an extra gradient
    /// added at the latent vector); accumulates parameter gradients and
    /// returns the gradient with respect to the input images.
    fn backward(&mut self, d_logits: &ArrayView2<'_, F>, d_z: Option<&ArrayView2<'_, F>>)
        -> Array4<F>;

    /// Trainable parameters in stable construction order.
    fn params_mut(&mut self) -> Vec<&mut Param<F>>;

    /// Non-trainable running statistics (batch-norm), possibly empty.
    fn running_stats_mut(&mut self) -> Vec<(String, &mut Array1<f64>)>;

    fn latent_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn arch(&self) -> Arch;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Total trainable scalar count.
    fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }
}

/// Construct a model. `input_shape` is `(channels, height, width)`; the
/// residual architectures only check the channel count, while the MLP
/// derives its flattened input width from it.
pub fn build_model<F: Scalar>(
    arch: Arch,
    num_classes: usize,
    input_shape: (usize, usize, usize),
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Box<dyn Model<F>>> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "num_classes must be >= 2, got {num_classes}"
        )));
    }
    let (c, h, w) = input_shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Config(format!(
            "input shape must be positive, got {input_shape:?}"
        )));
    }
    Ok(match arch {
        Arch::Mlp => Box::new(Mlp::new(c * h * w, &[1024, 512, 256], num_classes, rng)),
        Arch::Resnet18 => Box::new(ResNet::resnet18(c, num_classes, rng)),
        Arch::Resnet18Cifar => Box::new(ResNet::resnet18_cifar(c, num_classes, rng)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{inbiased_losses, inbiased_losses_grad, AlignmentWeights};
    use approx::assert_abs_diff_eq;
    use ndarray::Array4;
    use rand::Rng;

    #[test]
    fn arch_round_trips_through_strings() {
        for arch in [Arch::Resnet18, Arch::Resnet18Cifar, Arch::Mlp] {
            assert_eq!(arch.to_string().parse::<Arch>().unwrap(), arch);
        }
        assert!("resnet50".parse::<Arch>().is_err());
    }

    #[test]
    fn shape_contracts() {
        let mut rng = crate::rng::stream(21, "test/build");
        let mut model = build_model::<f32>(Arch::Resnet18Cifar, 10, (3, 32, 32), &mut rng).unwrap();
        let x = Array4::zeros((2, 3, 32, 32));
        let (z, logits) = model.forward_split(&x.view(), false);
        assert_eq!(z.dim(), (2, 512));
        assert_eq!(logits.dim(), (2, 10));
        assert_eq!(model.latent_dim(), 512);
    }

    #[test]
    fn different_seeds_give_different_parameters() {
        let mut a = crate::rng::stream(1, "init/a");
        let mut b = crate::rng::stream(2, "init/a");
        let mut ma = build_model::<f32>(Arch::Mlp, 10, (3, 8, 8), &mut a).unwrap();
        let mut mb = build_model::<f32>(Arch::Mlp, 10, (3, 8, 8), &mut b).unwrap();
        let pa = ma.params_mut();
        let pb = mb.params_mut();
        let max_delta = pa
            .iter()
            .zip(pb.iter())
            .flat_map(|(x, y)| {
                x.value
                    .iter()
                    .zip(y.value.iter())
                    .map(|(a, b)| (a - b).abs())
            })
            .fold(0.0f32, f32::max);
        assert!(max_delta > 0.0);
    }

    #[test]
    fn eval_forward_is_deterministic_and_consistent() {
        let mut rng = crate::rng::stream(22, "test/det");
        let mut model = build_model::<f32>(Arch::Mlp, 5, (1, 6, 6), &mut rng).unwrap();
        let x = Array4::from_shape_fn((3, 1, 6, 6), |_| rng.gen_range(0.0f32..1.0));
        let (z1, l1) = model.forward_split(&x.view(), false);
        let (z2, l2) = model.forward_split(&x.view(), false);
        assert_eq!(z1, z2);
        assert_eq!(l1, l2);
        assert_eq!(z1.nrows(), 3);
    }

    /// Full composite-objective gradient check on a small two-hidden-layer
    /// network at f64.
    #[test]
    fn composite_gradcheck_on_toy_mlp() {
        let mut rng = crate::rng::stream(23, "test/gradcheck");
        let mut rgb = Mlp::<f64>::new(12, &[8, 6], 3, &mut rng);
        let mut peer = Mlp::<f64>::new(12, &[8, 6], 3, &mut rng);
        let x = Array4::from_shape_fn((4, 3, 2, 2), |_| rng.gen_range(0.0..1.0));
        let xs = Array4::from_shape_fn((4, 3, 2, 2), |_| rng.gen_range(0.0..1.0));
        let labels = [0u32, 2, 1, 0];
        let weights = AlignmentWeights {
            lambda_rgb: 1.5,
            lambda_shape: 1.0,
            gamma_rgb: 0.8,
            gamma_shape: 2.0,
        };

        let (pz, pl) = peer.forward_split(&xs.view(), false);
        let loss_of = |rgb: &mut Mlp<f64>| -> f64 {
            let (z, l) = rgb.forward_split(&x.view(), false);
            inbiased_losses(&l.view(), &z.view(), &pl.view(), &pz.view(), &labels, &weights)
                .unwrap()
                .rgb
                .total
        };

        let (z, l) = rgb.forward_split(&x.view(), false);
        let (_, grads) =
            inbiased_losses_grad(&l.view(), &z.view(), &pl.view(), &pz.view(), &labels, &weights)
                .unwrap();
        rgb.zero_grad();
        rgb.backward(&grads.d_rgb_logits.view(), Some(&grads.d_rgb_z.view()));

        let eps = 1e-5;
        let mut worst_rel: f64 = 0.0;
        for pi in 0..rgb.params_mut().len() {
            let len = rgb.params_mut()[pi].value.len();
            for probe in [0, len / 2, len - 1] {
                let orig = rgb.params_mut()[pi].value.as_slice().unwrap()[probe];
                rgb.params_mut()[pi].value.as_slice_mut().unwrap()[probe] = orig + eps;
                let fp = loss_of(&mut rgb);
                rgb.params_mut()[pi].value.as_slice_mut().unwrap()[probe] = orig - eps;
                let fm = loss_of(&mut rgb);
                rgb.params_mut()[pi].value.as_slice_mut().unwrap()[probe] = orig;
                let fd = (fp - fm) / (2.0 * eps);
                let an = rgb.params_mut()[pi].grad.as_slice().unwrap()[probe];
                let rel = (an - fd).abs() / fd.abs().max(an.abs()).max(1e-8);
                worst_rel = worst_rel.max(rel);
            }
        }
        assert!(
            worst_rel < 1e-4,
            "worst relative gradient error {worst_rel:.3e} exceeds 1e-4"
        );
    }

    /// Every parameter receives a finite, somewhere-nonzero gradient from a
    /// cross-entropy loss: no dead subgraphs.
    #[test]
    fn gradient_reaches_every_parameter() {
        let mut rng = crate::rng::stream(24, "test/flow");
        for arch in [Arch::Resnet18Cifar, Arch::Mlp] {
            let mut model = build_model::<f32>(arch, 4, (3, 16, 16), &mut rng).unwrap();
            let x = Array4::from_shape_fn((4, 3, 16, 16), |_| rng.gen_range(0.0f32..1.0));
            let labels = [0u32, 1, 2, 3];
            let (_, logits) = model.forward_split(&x.view(), true);
            let (_, d_logits) =
                crate::losses::cross_entropy_grad(&logits.view(), &labels).unwrap();
            model.zero_grad();
            model.backward(&d_logits.view(), None);
            for p in model.params_mut() {
                assert!(
                    p.grad.iter().all(|v| v.is_finite()),
                    "non-finite gradient in {}",
                    p.name
                );
                assert!(
                    p.grad.iter().any(|v| *v != 0.0),
                    "all-zero gradient in {} ({arch})",
                    p.name
                );
            }
        }
    }

    #[test]
    fn classifier_applied_to_z_reproduces_logits() {
        let mut rng = crate::rng::stream(25, "test/split");
        let mut model = build_model::<f64>(Arch::Resnet18Cifar, 7, (3, 16, 16), &mut rng).unwrap();
        let x = Array4::from_shape_fn((2, 3, 16, 16), |_| rng.gen_range(0.0..1.0));
        let (z, logits) = model.forward_split(&x.view(), false);
        // recompute g(z) by hand from the classifier parameters
        let params = model.params_mut();
        let (wp, bp) = {
            let n = params.len();
            (&params[n - 2], &params[n - 1])
        };
        assert!(wp.name.contains("classifier"));
        let w = wp
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .to_owned();
        let b = bp
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
            .to_owned();
        let manual = z.dot(&w.t()) + &b;
        for (a, e) in logits.iter().zip(manual.iter()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn full_resnet_gradcheck_spot_probes() {
        let mut rng = crate::rng::stream(26, "test/resnet-fd");
        let mut model = ResNet::<f64>::resnet18_cifar(3, 3, &mut rng);
        let x = Array4::from_shape_fn((2, 3, 8, 8), |_| rng.gen_range(0.0..1.0));
        let labels = [0u32, 2];
        let loss_of = |m: &mut ResNet<f64>| -> f64 {
            for (_, stat) in m.running_stats_mut() {
                stat.fill(0.0);
            }
            // reset variance buffers to 1 (they alternate mean/var by name)
            for (name, stat) in m.running_stats_mut() {
                if name.ends_with("var") {
                    stat.fill(1.0);
                }
            }
            let (_, l) = m.forward_split(&x.view(), true);
            crate::losses::cross_entropy(&l.view(), &labels).unwrap()
        };
        let base = loss_of(&mut model);
        assert!(base.is_finite());
        let (_, l) = {
            for (name, stat) in model.running_stats_mut() {
                stat.fill(if name.ends_with("var") { 1.0 } else { 0.0 });
            }
            model.forward_split(&x.view(), true)
        };
        let (_, d_logits) = crate::losses::cross_entropy_grad(&l.view(), &labels).unwrap();
        model.zero_grad();
        model.backward(&d_logits.view(), None);

        // small step: batch-norm feeds ReLU with near-zero activations, and
        // every kink a finite difference straddles biases it, so the window
        // must be tight
        let eps = 1e-7;
        // probe a few parameters spread across the depth
        let n_params = model.params_mut().len();
        for pi in [0usize, n_params / 3, 2 * n_params / 3, n_params - 1] {
            let probe = model.params_mut()[pi].value.len() / 2;
            let orig = model.params_mut()[pi].value.as_slice().unwrap()[probe];
            model.params_mut()[pi].value.as_slice_mut().unwrap()[probe] = orig + eps;
            let fp = loss_of(&mut model);
            model.params_mut()[pi].value.as_slice_mut().unwrap()[probe] = orig - eps;
            let fm = loss_of(&mut model);
            model.params_mut()[pi].value.as_slice_mut().unwrap()[probe] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let an = model.params_mut()[pi].grad.as_slice().unwrap()[probe];
            let rel = (an - fd).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(
                rel < 1e-4,
                "param {pi} rel err {rel:.3e} (analytic {an:.6e}, fd {fd:.6e})"
            );
        }
    }
}
