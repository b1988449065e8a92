//! ResNet-18 and its small-image variant.
//!
//! The only difference between the two is the stem: the standard network
//! opens with a 7x7 stride-2 convolution followed by a 3x3 stride-2
//! max-pool, while the small-image variant uses a 3x3 stride-1 convolution
//! and no pooling. Everything after the stem is identical: four stages of
//! two basic blocks (64/128/256/512 channels), global average pooling to a
//! 512-wide latent, and a linear classifier.

use super::{Arch, Model};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, BatchNorm2d, Conv2d, Linear, MaxPool2d, Param, Relu,
};
use crate::num::Scalar;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4};
use rand_chacha::ChaCha8Rng;

struct BasicBlock<F: Scalar> {
    conv1: Conv2d<F>,
    bn1: BatchNorm2d<F>,
    relu1: Relu<F>,
    conv2: Conv2d<F>,
    bn2: BatchNorm2d<F>,
    down: Option<(Conv2d<F>, BatchNorm2d<F>)>,
    relu_out: Relu<F>,
}

impl<F: Scalar> BasicBlock<F> {
    fn new(name: &str, in_c: usize, out_c: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let conv1 = Conv2d::new(&format!("{name}.conv1"), in_c, out_c, 3, stride, 1, false, rng);
        let conv2 = Conv2d::new(&format!("{name}.conv2"), out_c, out_c, 3, 1, 1, false, rng);
        let down = (stride != 1 || in_c != out_c).then(|| {
            (
                Conv2d::new(&format!("{name}.down"), in_c, out_c, 1, stride, 0, false, rng),
                BatchNorm2d::new(&format!("{name}.down_bn"), out_c),
            )
        });
        Self {
            conv1,
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), out_c),
            relu1: Relu::new(),
            conv2,
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), out_c),
            down,
            relu_out: Relu::new(),
        }
    }

    fn forward(&mut self, x: &ArrayView4<'_, F>, train: bool) -> Array4<F> {
        let main = self.conv1.forward(x);
        let main = self.bn1.forward(&main.view(), train);
        let main = self
            .relu1
            .forward(&main.into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let main = self.conv2.forward(&main.view());
        let mut main = self.bn2.forward(&main.view(), train);
        match &mut self.down {
            Some((conv, bn)) => {
                let idt = conv.forward(x);
                let idt = bn.forward(&idt.view(), train);
                main += &idt;
            }
            None => main += x,
        }
        self.relu_out
            .forward(&main.into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap()
    }

    fn backward(&mut self, dy: &ArrayView4<'_, F>) -> Array4<F> {
        let d_sum = self
            .relu_out
            .backward(&dy.to_owned().into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let d = self.bn2.backward(&d_sum.view());
        let d = self.conv2.backward(&d.view());
        let d = self
            .relu1
            .backward(&d.into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let d = self.bn1.backward(&d.view());
        let mut dx = self.conv1.backward(&d.view());
        match &mut self.down {
            Some((conv, bn)) => {
                let d_idt = bn.backward(&d_sum.view());
                let d_idt = conv.backward(&d_idt.view());
                dx += &d_idt;
            }
            None => dx += &d_sum,
        }
        dx
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = self.conv1.params_mut();
        out.extend(self.bn1.params_mut());
        out.extend(self.conv2.params_mut());
        out.extend(self.bn2.params_mut());
        if let Some((conv, bn)) = &mut self.down {
            out.extend(conv.params_mut());
            out.extend(bn.params_mut());
        }
        out
    }

    fn running_stats_mut(&mut self) -> Vec<(String, &mut Array1<f64>)> {
        let mut out = vec![
            (format!("{}.mean", self.bn1.gamma.name), &mut self.bn1.running_mean),
            (format!("{}.var", self.bn1.gamma.name), &mut self.bn1.running_var),
            (format!("{}.mean", self.bn2.gamma.name), &mut self.bn2.running_mean),
            (format!("{}.var", self.bn2.gamma.name), &mut self.bn2.running_var),
        ];
        if let Some((_, bn)) = &mut self.down {
            out.push((format!("{}.mean", bn.gamma.name), &mut bn.running_mean));
            out.push((format!("{}.var", bn.gamma.name), &mut bn.running_var));
        }
        out
    }
}

pub struct ResNet<F: Scalar> {
    arch: Arch,
    stem_conv: Conv2d<F>,
    stem_bn: BatchNorm2d<F>,
    stem_relu: Relu<F>,
    stem_pool: Option<MaxPool2d<F>>,
    blocks: Vec<BasicBlock<F>>,
    classifier: Linear<F>,
    num_classes: usize,
    cached_hw: Option<(usize, usize)>,
}

impl<F: Scalar> ResNet<F> {
    pub fn resnet18(in_channels: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::build(Arch::Resnet18, in_channels, num_classes, rng)
    }

    pub fn resnet18_cifar(in_channels: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::build(Arch::Resnet18Cifar, in_channels, num_classes, rng)
    }

    fn build(arch: Arch, in_c: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let (stem_conv, stem_pool) = match arch {
            Arch::Resnet18 => (
                Conv2d::new("stem.conv", in_c, 64, 7, 2, 3, false, rng),
                Some(MaxPool2d::new(3, 2, 1)),
            ),
            Arch::Resnet18Cifar => (
                Conv2d::new("stem.conv", in_c, 64, 3, 1, 1, false, rng),
                None,
            ),
            Arch::Mlp => unreachable!("mlp is not a residual architecture"),
        };
        let plan: [(usize, usize, usize); 8] = [
            (64, 64, 1),
            (64, 64, 1),
            (64, 128, 2),
            (128, 128, 1),
            (128, 256, 2),
            (256, 256, 1),
            (256, 512, 2),
            (512, 512, 1),
        ];
        let blocks = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, stride))| {
                let stage = i / 2 + 1;
                let slot = i % 2;
                BasicBlock::new(&format!("layer{stage}.{slot}"), cin, cout, stride, rng)
            })
            .collect();
        Self {
            arch,
            stem_conv,
            stem_bn: BatchNorm2d::new("stem.bn", 64),
            stem_relu: Relu::new(),
            stem_pool,
            blocks,
            classifier: Linear::new("classifier", 512, num_classes, rng),
            num_classes,
            cached_hw: None,
        }
    }
}

impl<F: Scalar> Model<F> for ResNet<F> {
    fn forward_split(&mut self, x: &ArrayView4<'_, F>, train: bool) -> (Array2<F>, Array2<F>) {
        let mut cur = self.stem_conv.forward(x);
        cur = self.stem_bn.forward(&cur.view(), train);
        cur = self
            .stem_relu
            .forward(&cur.into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        if let Some(pool) = &mut self.stem_pool {
            cur = pool.forward(&cur.view());
        }
        for block in &mut self.blocks {
            cur = block.forward(&cur.view(), train);
        }
        let (_, _, h, w) = cur.dim();
        self.cached_hw = Some((h, w));
        let z = global_avg_pool(&cur.view());
        let logits = self.classifier.forward(&z.view());
        (z, logits)
    }

    fn backward(
        &mut self,
        d_logits: &ArrayView2<'_, F>,
        d_z: Option<&ArrayView2<'_, F>>,
    ) -> Array4<F> {
        let mut d_latent = self.classifier.backward(d_logits);
        if let Some(extra) = d_z {
            d_latent += extra;
        }
        let hw = self.cached_hw.expect("backward before forward");
        let mut d = global_avg_pool_backward(&d_latent.view(), hw);
        for block in self.blocks.iter_mut().rev() {
            d = block.backward(&d.view());
        }
        if let Some(pool) = &mut self.stem_pool {
            d = pool.backward(&d.view());
        }
        let d = self
            .stem_relu
            .backward(&d.into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let d = self.stem_bn.backward(&d.view());
        self.stem_conv.backward(&d.view())
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = self.stem_conv.params_mut();
        out.extend(self.stem_bn.params_mut());
        for block in &mut self.blocks {
            out.extend(block.params_mut());
        }
        out.extend(self.classifier.params_mut());
        out
    }

    fn running_stats_mut(&mut self) -> Vec<(String, &mut Array1<f64>)> {
        let mut out = vec![
            ("stem.bn.mean".to_string(), &mut self.stem_bn.running_mean),
            ("stem.bn.var".to_string(), &mut self.stem_bn.running_var),
        ];
        for block in &mut self.blocks {
            out.extend(block.running_stats_mut());
        }
        out
    }

    fn latent_dim(&self) -> usize {
        512
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn arch(&self) -> Arch {
        self.arch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    #[test]
    fn parameter_count_matches_the_standard_architecture() {
        let mut rng = crate::rng::stream(41, "test/resnet-count");
        let mut m = ResNet::<f32>::resnet18_cifar(3, 10, &mut rng);
        // well-known total for ResNet-18 with a 3x3 stem and 10 classes
        let total: usize = m.param_count();
        assert_eq!(total, 11_173_962);
    }

    #[test]
    fn stems_differ_between_variants() {
        let mut rng = crate::rng::stream(42, "test/resnet-stem");
        let std = ResNet::<f32>::resnet18(3, 10, &mut rng);
        let cifar = ResNet::<f32>::resnet18_cifar(3, 10, &mut rng);
        assert_eq!(std.stem_conv.kernel(), 7);
        assert!(std.stem_pool.is_some());
        assert_eq!(cifar.stem_conv.kernel(), 3);
        assert!(cifar.stem_pool.is_none());
    }

    #[test]
    fn standard_variant_handles_large_inputs() {
        let mut rng = crate::rng::stream(43, "test/resnet-96");
        let mut m = ResNet::<f32>::resnet18(3, 10, &mut rng);
        let x = Array4::from_shape_fn((1, 3, 96, 96), |_| rng.gen_range(0.0f32..1.0));
        let (z, logits) = m.forward_split(&x.view(), false);
        assert_eq!(z.dim(), (1, 512));
        assert_eq!(logits.dim(), (1, 10));
    }

    #[test]
    fn backward_returns_input_sized_gradient() {
        let mut rng = crate::rng::stream(44, "test/resnet-back");
        let mut m = ResNet::<f32>::resnet18_cifar(3, 4, &mut rng);
        let x = Array4::from_shape_fn((2, 3, 16, 16), |_| rng.gen_range(0.0f32..1.0));
        let (_, logits) = m.forward_split(&x.view(), true);
        let d = logits.mapv(|_| 0.25f32);
        let dx = m.backward(&d.view(), None);
        assert_eq!(dx.dim(), x.dim());
        assert!(dx.iter().all(|v| v.is_finite()));
    }
}
