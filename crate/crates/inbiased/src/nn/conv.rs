//! 2-D convolution (cross-correlation, the learned-filter convention)
//! lowered to matrix multiplication via im2col.
//!
//! The batched input is lowered sample by sample into contiguous slabs so
//! the work parallelizes over disjoint memory; every matrix product is a
//! single-threaded deterministic gemm, which keeps results bit-identical
//! whether or not the thread pool is in use.

use super::init;
use super::Param;
use crate::num::Scalar;
use crate::par;
use ndarray::linalg::general_mat_mul;
use ndarray::{Array3, Array4, ArrayView4, ArrayViewMut2, Axis, Ix1, Ix4};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Conv2d<F: Scalar> {
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
    pub stride: usize,
    pub padding: usize,
    cached_input: Option<Array4<F>>,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(stride >= 1, "stride must be >= 1");
        let w = init::conv_weight::<F>(rng, out_c, in_c, kernel, kernel);
        let bias = bias.then(|| {
            let b = init::linear_bias::<F>(rng, out_c, in_c * kernel * kernel);
            Param::new(format!("{name}.bias"), b.into_dyn())
        });
        Self {
            weight: Param::new(format!("{name}.weight"), w.into_dyn()),
            bias,
            stride,
            padding,
            cached_input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        let oh = (h + 2 * self.padding - k) / self.stride + 1;
        let ow = (w + 2 * self.padding - k) / self.stride + 1;
        (oh, ow)
    }

    pub fn forward(&mut self, x: &ArrayView4<'_, F>) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels(), "conv input channels");
        let k = self.kernel();
        assert!(
            h + 2 * self.padding >= k && w + 2 * self.padding >= k,
            "conv input {h}x{w} too small for kernel {k}"
        );
        let (oh, ow) = self.output_hw(h, w);
        let out_c = self.out_channels();
        let cols = im2col(x, k, self.stride, self.padding, oh, ow);
        let w2 = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .into_shape((out_c, c * k * k))
            .unwrap();
        let mut out = Array4::zeros((n, out_c, oh, ow));
        {
            let out_slice = out.as_slice_mut().unwrap();
            par::for_each_chunk_mut(out_slice, out_c * oh * ow, |i, chunk| {
                let mut view = ArrayViewMut2::from_shape((out_c, oh * ow), chunk).unwrap();
                let ci = cols.index_axis(Axis(0), i);
                general_mat_mul(F::one(), &w2, &ci, F::zero(), &mut view);
            });
        }
        if let Some(bias) = &self.bias {
            let b = bias.value.view().into_dimensionality::<Ix1>().unwrap();
            for mut sample in out.axis_iter_mut(Axis(0)) {
                for (ch, mut plane) in sample.axis_iter_mut(Axis(0)).enumerate() {
                    plane.mapv_inplace(|v| v + b[ch]);
                }
            }
        }
        self.cached_input = Some(x.to_owned());
        out
    }

    /// Accumulates weight/bias gradients; returns the input gradient.
    pub fn backward(&mut self, dy: &ArrayView4<'_, F>) -> Array4<F> {
        let (n, c, h, w) = self
            .cached_input
            .as_ref()
            .expect("backward before forward")
            .dim();
        let k = self.kernel();
        let (oh, ow) = self.output_hw(h, w);
        let out_c = self.out_channels();
        assert_eq!(dy.dim(), (n, out_c, oh, ow), "conv dy shape");

        // recompute the lowering instead of caching it: it is k*k times
        // larger than the input
        let cols = {
            let x = self.cached_input.as_ref().unwrap();
            im2col(&x.view(), k, self.stride, self.padding, oh, ow)
        };

        // dW = sum_i dy_i . cols_i^T, accumulated in fixed sample order
        let mut dw = self
            .weight
            .grad
            .view_mut()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .into_shape((out_c, c * k * k))
            .unwrap();
        for i in 0..n {
            let dyi = dy
                .index_axis(Axis(0), i)
                .into_shape((out_c, oh * ow))
                .unwrap();
            let ci = cols.index_axis(Axis(0), i);
            general_mat_mul(F::one(), &dyi, &ci.t(), F::one(), &mut dw);
        }

        if let Some(bias) = &mut self.bias {
            let mut db = bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            for ch in 0..out_c {
                let mut acc = F::zero();
                for v in dy.index_axis(Axis(1), ch).iter() {
                    acc = acc + *v;
                }
                db[ch] = db[ch] + acc;
            }
        }

        // dx via col2im of W^T . dy_i, sample-parallel over disjoint slabs
        let w2 = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .into_shape((out_c, c * k * k))
            .unwrap();
        let mut dx = Array4::zeros((n, c, h, w));
        let stride = self.stride;
        let padding = self.padding;
        {
            let dx_slice = dx.as_slice_mut().unwrap();
            par::for_each_chunk_mut(dx_slice, c * h * w, |i, chunk| {
                let dyi = dy
                    .index_axis(Axis(0), i)
                    .into_shape((out_c, oh * ow))
                    .unwrap();
                let mut dcols = ndarray::Array2::zeros((c * k * k, oh * ow));
                general_mat_mul(F::one(), &w2.t(), &dyi, F::zero(), &mut dcols);
                col2im_into(&dcols, chunk, c, h, w, k, stride, padding, oh, ow);
            });
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
        out
    }
}

/// Lower `(n, c, h, w)` to `(n, c*k*k, oh*ow)` patches.
fn im2col<F: Scalar>(
    x: &ArrayView4<'_, F>,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Array3<F> {
    let (n, c, h, w) = x.dim();
    let mut cols = Array3::zeros((n, c * k * k, oh * ow));
    let cols_slice = cols.as_slice_mut().unwrap();
    par::for_each_chunk_mut(cols_slice, c * k * k * oh * ow, |i, chunk| {
        let xi = x.index_axis(Axis(0), i);
        let mut idx = 0usize;
        for ch in 0..c {
            let plane = xi.index_axis(Axis(0), ch);
            for ky in 0..k {
                for kx in 0..k {
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            chunk[idx] = if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize
                            {
                                plane[[iy as usize, ix as usize]]
                            } else {
                                F::zero()
                            };
                            idx += 1;
                        }
                    }
                }
            }
        }
    });
    cols
}

/// Scatter-add patch gradients back onto one sample's `(c, h, w)` slab.
#[allow(clippy::too_many_arguments)]
fn col2im_into<F: Scalar>(
    dcols: &ndarray::Array2<F>,
    dx: &mut [F],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) {
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let out_idx = (ch * h + iy as usize) * w + ix as usize;
                        dx[out_idx] = dx[out_idx] + dcols[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array4;
    use rand::Rng;

    /// Brute-force cross-correlation used as the independent reference.
    fn conv_reference(
        x: &Array4<f64>,
        w: &Array4<f64>,
        b: Option<&[f64]>,
        stride: usize,
        padding: usize,
    ) -> Array4<f64> {
        let (n, c, h, wid) = x.dim();
        let (oc, _, k, _) = w.dim();
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (wid + 2 * padding - k) / stride + 1;
        let mut out = Array4::zeros((n, oc, oh, ow));
        for i in 0..n {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.map(|b| b[o]).unwrap_or(0.0);
                        for ch in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < wid as isize {
                                        acc += x[[i, ch, iy as usize, ix as usize]]
                                            * w[[o, ch, ky as usize, kx as usize]];
                                    }
                                }
                            }
                        }
                        out[[i, o, oy, ox]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_brute_force() {
        let mut rng = crate::rng::stream(5, "test/conv-fwd");
        for &(stride, padding) in &[(1usize, 1usize), (2, 1), (1, 0)] {
            let mut conv = Conv2d::<f64>::new("c", 3, 4, 3, stride, padding, true, &mut rng);
            let x = Array4::from_shape_fn((2, 3, 7, 6), |_| rng.gen_range(-1.0..1.0));
            let y = conv.forward(&x.view());
            let wv = conv.weight.value.view().into_dimensionality::<Ix4>().unwrap();
            let bv = conv
                .bias
                .as_ref()
                .unwrap()
                .value
                .as_slice()
                .unwrap()
                .to_vec();
            let expected = conv_reference(&x, &wv.to_owned(), Some(&bv), stride, padding);
            assert_eq!(y.dim(), expected.dim());
            for (a, b) in y.iter().zip(expected.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = crate::rng::stream(6, "test/conv-fd");
        let mut conv = Conv2d::<f64>::new("c", 2, 3, 3, 2, 1, true, &mut rng);
        let x = Array4::from_shape_fn((2, 2, 5, 5), |_| rng.gen_range(-1.0..1.0));
        let objective = |conv: &mut Conv2d<f64>, x: &Array4<f64>| -> f64 {
            let y = conv.forward(&x.view());
            y.iter().map(|v| 0.5 * v * v).sum()
        };
        let y = conv.forward(&x.view());
        let dx = conv.backward(&y.view());
        let eps = 1e-6;

        for idx in [[0usize, 0, 0, 0], [1, 1, 2, 3], [0, 1, 4, 4]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (objective(&mut conv, &xp) - objective(&mut conv, &xm)) / (2.0 * eps);
            assert_abs_diff_eq!(dx[idx], fd, epsilon = 1e-6);
        }

        let base_w = conv.weight.value.clone();
        for idx in [[0usize, 0, 0, 0], [2, 1, 2, 2]] {
            let mut wp = base_w.clone();
            wp[idx] += eps;
            let mut wm = base_w.clone();
            wm[idx] -= eps;
            conv.weight.value.assign(&wp);
            let fp = objective(&mut conv, &x);
            conv.weight.value.assign(&wm);
            let fm = objective(&mut conv, &x);
            conv.weight.value.assign(&base_w);
            let fd = (fp - fm) / (2.0 * eps);
            assert_abs_diff_eq!(conv.weight.grad[idx], fd, epsilon = 1e-6);
        }

        // bias gradient
        let b0 = conv.bias.as_ref().unwrap().value[[0]];
        conv.bias.as_mut().unwrap().value[[0]] = b0 + eps;
        let fp = objective(&mut conv, &x);
        conv.bias.as_mut().unwrap().value[[0]] = b0 - eps;
        let fm = objective(&mut conv, &x);
        let fd = (fp - fm) / (2.0 * eps);
        assert_abs_diff_eq!(conv.bias.as_ref().unwrap().grad[[0]], fd, epsilon = 1e-6);
    }

    #[test]
    fn parallel_matches_sequential() {
        let mut rng = crate::rng::stream(7, "test/conv-par");
        let mut conv = Conv2d::<f32>::new("c", 3, 8, 3, 1, 1, false, &mut rng);
        let x = Array4::from_shape_fn((4, 3, 9, 9), |_| rng.gen_range(-1.0f32..1.0));
        let y_par = conv.forward(&x.view());
        crate::par::force_sequential(true);
        let y_seq = conv.forward(&x.view());
        crate::par::force_sequential(false);
        assert_eq!(y_par, y_seq);
    }
}
