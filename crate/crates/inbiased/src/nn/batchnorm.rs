//! Batch normalization over the channel axis of `(n, c, h, w)` tensors.
//!
//! Training mode normalizes with batch statistics and maintains running
//! estimates (exponential moving average, unbiased variance). Evaluation
//! mode normalizes with the running estimates and has a well-defined
//! backward pass of its own, which attack generation relies on: gradients
//! through a frozen network must not couple samples through batch
//! statistics.

use super::Param;
use crate::num::{cast, Scalar};
use ndarray::{Array1, Array4, ArrayView4, Axis};

#[derive(Debug, Clone)]
pub struct BatchNorm2d<F: Scalar> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<Cache<F>>,
}

#[derive(Debug, Clone)]
struct Cache<F: Scalar> {
    xhat: Array4<F>,
    inv_std: Array1<F>,
    train_mode: bool,
}

impl<F: Scalar> BatchNorm2d<F> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Array1::from_elem(channels, F::one()).into_dyn()),
            beta: Param::new(format!("{name}.beta"), Array1::zeros(channels).into_dyn()),
            running_mean: Array1::zeros(channels),
            running_var: Array1::from_elem(channels, 1.0),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&mut self, x: &ArrayView4<'_, F>, train: bool) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "batchnorm channels");
        let m = (n * h * w) as f64;
        assert!(!train || n * h * w > 1, "batchnorm needs > 1 value per channel in training");

        let mut out = Array4::zeros((n, c, h, w));
        let mut xhat = Array4::zeros((n, c, h, w));
        let mut inv_std_v = Array1::zeros(c);
        for ch in 0..c {
            let (mean, inv_std) = if train {
                // accumulate in f64 for stable statistics at any batch size
                let mut sum = 0.0f64;
                let mut sum_sq = 0.0f64;
                for v in x.index_axis(Axis(1), ch).iter() {
                    let v = v.to_f64().unwrap();
                    sum += v;
                    sum_sq += v * v;
                }
                let mean = sum / m;
                let var = (sum_sq / m - mean * mean).max(0.0);
                let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                self.running_mean[ch] =
                    (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean;
                self.running_var[ch] =
                    (1.0 - self.momentum) * self.running_var[ch] + self.momentum * unbiased;
                (mean, 1.0 / (var + self.eps).sqrt())
            } else {
                (
                    self.running_mean[ch],
                    1.0 / (self.running_var[ch] + self.eps).sqrt(),
                )
            };
            let mean_f = cast::<F>(mean);
            let inv_f = cast::<F>(inv_std);
            inv_std_v[ch] = inv_f;
            let g = self.gamma.value[[ch]];
            let b = self.beta.value[[ch]];
            let src = x.index_axis(Axis(1), ch);
            let mut xh = xhat.index_axis_mut(Axis(1), ch);
            let mut dst = out.index_axis_mut(Axis(1), ch);
            ndarray::Zip::from(&mut dst)
                .and(&mut xh)
                .and(&src)
                .for_each(|d, xh, &v| {
                    let norm = (v - mean_f) * inv_f;
                    *xh = norm;
                    *d = g * norm + b;
                });
        }
        self.cache = Some(Cache {
            xhat,
            inv_std: inv_std_v,
            train_mode: train,
        });
        out
    }

    pub fn backward(&mut self, dy: &ArrayView4<'_, F>) -> Array4<F> {
        let cache = self.cache.as_ref().expect("backward before forward");
        let (n, c, h, w) = dy.dim();
        let m = cast::<F>((n * h * w) as f64);
        let mut dx = Array4::zeros((n, c, h, w));
        for ch in 0..c {
            let g = self.gamma.value[[ch]];
            let inv_std = cache.inv_std[ch];
            let dy_c = dy.index_axis(Axis(1), ch);
            let xh_c = cache.xhat.index_axis(Axis(1), ch);

            // parameter gradients accumulate in both modes
            let mut sum_dy = F::zero();
            let mut sum_dy_xh = F::zero();
            ndarray::Zip::from(&dy_c).and(&xh_c).for_each(|&d, &xh| {
                sum_dy = sum_dy + d;
                sum_dy_xh = sum_dy_xh + d * xh;
            });
            self.beta.grad[[ch]] = self.beta.grad[[ch]] + sum_dy;
            self.gamma.grad[[ch]] = self.gamma.grad[[ch]] + sum_dy_xh;

            let mut dx_c = dx.index_axis_mut(Axis(1), ch);
            if cache.train_mode {
                // dx = g*inv_std/m * (m*dy - sum(dy) - xhat * sum(dy*xhat))
                let scale = g * inv_std / m;
                ndarray::Zip::from(&mut dx_c)
                    .and(&dy_c)
                    .and(&xh_c)
                    .for_each(|o, &d, &xh| {
                        *o = scale * (m * d - sum_dy - xh * sum_dy_xh);
                    });
            } else {
                let scale = g * inv_std;
                ndarray::Zip::from(&mut dx_c).and(&dy_c).for_each(|o, &d| {
                    *o = scale * d;
                });
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array4;
    use rand::Rng;

    #[test]
    fn train_mode_normalizes_to_zero_mean_unit_var() {
        let mut rng = crate::rng::stream(8, "test/bn");
        let mut bn = BatchNorm2d::<f64>::new("bn", 3);
        let x = Array4::from_shape_fn((4, 3, 5, 5), |_| rng.gen_range(-2.0..5.0));
        let y = bn.forward(&x.view(), true);
        for ch in 0..3 {
            let plane = y.index_axis(Axis(1), ch);
            let m: f64 = plane.iter().sum::<f64>() / plane.len() as f64;
            let v: f64 = plane.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / plane.len() as f64;
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut bn = BatchNorm2d::<f64>::new("bn", 1);
        bn.running_mean[0] = 2.0;
        bn.running_var[0] = 4.0;
        let x = Array4::from_elem((1, 1, 2, 2), 4.0);
        let y = bn.forward(&x.view(), false);
        // (4 - 2) / sqrt(4 + eps) ~= 1
        assert_abs_diff_eq!(y[[0, 0, 0, 0]], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn train_backward_matches_finite_differences() {
        let mut rng = crate::rng::stream(9, "test/bn-fd");
        let mut bn = BatchNorm2d::<f64>::new("bn", 2);
        bn.gamma.value[[0]] = 1.3;
        bn.gamma.value[[1]] = 0.7;
        bn.beta.value[[1]] = -0.2;
        let x = Array4::from_shape_fn((3, 2, 4, 4), |_| rng.gen_range(-1.0..1.0));
        let objective = |bn: &mut BatchNorm2d<f64>, x: &Array4<f64>| -> f64 {
            // fresh running stats each call so the objective is pure
            bn.running_mean.fill(0.0);
            bn.running_var.fill(1.0);
            let y = bn.forward(&x.view(), true);
            y.iter().enumerate().map(|(i, v)| v * v * (1.0 + (i % 5) as f64 * 0.1)).sum()
        };
        let y = {
            bn.running_mean.fill(0.0);
            bn.running_var.fill(1.0);
            bn.forward(&x.view(), true)
        };
        let dy = Array4::from_shape_fn(y.dim(), |idx| {
            let i = ((idx.0 * 2 + idx.1) * 4 + idx.2) * 4 + idx.3;
            2.0 * y[idx] * (1.0 + (i % 5) as f64 * 0.1)
        });
        let dx = bn.backward(&dy.view());
        let eps = 1e-6;
        for idx in [[0usize, 0, 0, 0], [2, 1, 3, 3], [1, 0, 2, 1]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (objective(&mut bn, &xp) - objective(&mut bn, &xm)) / (2.0 * eps);
            assert_abs_diff_eq!(dx[idx], fd, epsilon = 1e-5);
        }
    }

    #[test]
    fn eval_backward_is_diagonal_scaling() {
        let mut bn = BatchNorm2d::<f64>::new("bn", 1);
        bn.running_mean[0] = 0.5;
        bn.running_var[0] = 2.25;
        bn.gamma.value[[0]] = 3.0;
        let x = Array4::from_elem((2, 1, 2, 2), 1.0);
        let _ = bn.forward(&x.view(), false);
        let dy = Array4::from_elem((2, 1, 2, 2), 1.0);
        let dx = bn.backward(&dy.view());
        let expected = 3.0 / (2.25f64 + 1e-5).sqrt();
        for v in dx.iter() {
            assert_abs_diff_eq!(*v, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut bn = BatchNorm2d::<f64>::new("bn", 1);
        let x = Array4::from_elem((2, 1, 2, 2), 3.0);
        // constant input: batch mean 3, biased var 0
        let _ = bn.forward(&x.view(), true);
        assert_abs_diff_eq!(bn.running_mean[0], 0.9 * 0.0 + 0.1 * 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bn.running_var[0], 0.9 * 1.0 + 0.1 * 0.0, epsilon = 1e-12);
    }
}
