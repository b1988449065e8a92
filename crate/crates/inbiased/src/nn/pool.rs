//! Spatial pooling.

use crate::num::{cast, Scalar};
use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Axis};

/// Max pooling with padding treated as negative infinity.
#[derive(Debug, Clone)]
pub struct MaxPool2d<F: Scalar> {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// For each output element, the flat `h*w` index of the winning input.
    argmax: Option<(Array4<usize>, (usize, usize, usize, usize))>,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> MaxPool2d<F> {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            argmax: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    pub fn forward(&mut self, x: &ArrayView4<'_, F>) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = self.output_hw(h, w);
        let mut out = Array4::from_elem((n, c, oh, ow), F::neg_infinity());
        let mut arg = Array4::zeros((n, c, oh, ow));
        for i in 0..n {
            for ch in 0..c {
                let plane = x.index_axis(Axis(0), i);
                let plane = plane.index_axis(Axis(0), ch);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = F::neg_infinity();
                        let mut best_idx = 0usize;
                        for ky in 0..self.kernel {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let v = plane[[iy as usize, ix as usize]];
                                if v > best {
                                    best = v;
                                    best_idx = iy as usize * w + ix as usize;
                                }
                            }
                        }
                        out[[i, ch, oy, ox]] = best;
                        arg[[i, ch, oy, ox]] = best_idx;
                    }
                }
            }
        }
        self.argmax = Some((arg, (n, c, h, w)));
        out
    }

    pub fn backward(&mut self, dy: &ArrayView4<'_, F>) -> Array4<F> {
        let (arg, (n, c, h, w)) = self.argmax.as_ref().expect("backward before forward");
        let mut dx = Array4::zeros((*n, *c, *h, *w));
        for i in 0..*n {
            for ch in 0..*c {
                for oy in 0..dy.dim().2 {
                    for ox in 0..dy.dim().3 {
                        let flat = arg[[i, ch, oy, ox]];
                        let iy = flat / w;
                        let ix = flat % w;
                        dx[[i, ch, iy, ix]] = dx[[i, ch, iy, ix]] + dy[[i, ch, oy, ox]];
                    }
                }
            }
        }
        dx
    }
}

/// Mean over the spatial dimensions: `(n, c, h, w)` to `(n, c)`.
pub fn global_avg_pool<F: Scalar>(x: &ArrayView4<'_, F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let inv = cast::<F>(1.0 / (h * w) as f64);
    let mut out = Array2::zeros((n, c));
    for i in 0..n {
        for ch in 0..c {
            let mut acc = F::zero();
            let plane = x.index_axis(Axis(0), i);
            for v in plane.index_axis(Axis(0), ch).iter() {
                acc = acc + *v;
            }
            out[[i, ch]] = acc * inv;
        }
    }
    out
}

/// Gradient of [`global_avg_pool`]: spread evenly over the plane.
pub fn global_avg_pool_backward<F: Scalar>(
    dz: &ArrayView2<'_, F>,
    hw: (usize, usize),
) -> Array4<F> {
    let (n, c) = dz.dim();
    let (h, w) = hw;
    let inv = cast::<F>(1.0 / (h * w) as f64);
    let mut dx = Array4::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            let g = dz[[i, ch]] * inv;
            dx.index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(0), ch)
                .fill(g);
        }
    }
    dx
}
