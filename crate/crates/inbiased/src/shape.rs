//! Shape (edge-magnitude) extraction from image batches.
//!
//! The extractor upsamples each image to twice its size, applies a small
//! Gaussian blur to suppress noisy edges, convolves with the horizontal and
//! vertical Sobel kernels, takes the per-pixel gradient magnitude,
//! downsamples back to the original size and normalizes each image to
//! `[0, 1]` by its maximum. Color inputs are converted to luminance before
//! the gradient step, and the single magnitude channel is replicated to
//! three channels by default so the shape stream can reuse the same
//! encoder architecture as the color stream.

use crate::batch::ImageBatch;
use crate::error::{Error, Result};
use crate::par;
use ndarray::{Array2, Array4, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

/// Sobel kernel for horizontal gradients.
const SOBEL_X: [[f32; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
/// Sobel kernel for vertical gradients.
const SOBEL_Y: [[f32; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Luminance weights for RGB to grayscale conversion.
const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Magnitudes at or below this floor are treated as a flat image and
/// normalize to all zeros instead of amplifying rounding noise.
const NORM_FLOOR: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Bilinear,
}

/// Layout of the extractor output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputChannels {
    /// One magnitude channel copied to three, matching the color stream's shape.
    Replicate3,
    /// A single magnitude channel.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeExtractorConfig {
    pub upsample_factor: usize,
    pub blur_kernel: usize,
    pub blur_sigma: f32,
    pub interpolation: Interpolation,
    pub output_channels: OutputChannels,
}

impl Default for ShapeExtractorConfig {
    fn default() -> Self {
        Self {
            upsample_factor: 2,
            blur_kernel: 3,
            blur_sigma: 0.8,
            interpolation: Interpolation::Bilinear,
            output_channels: OutputChannels::Replicate3,
        }
    }
}

impl ShapeExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.upsample_factor < 1 {
            return Err(Error::Config("upsample_factor must be >= 1".into()));
        }
        if self.blur_kernel == 0 || self.blur_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "blur_kernel must be odd and positive, got {}",
                self.blur_kernel
            )));
        }
        if !(self.blur_sigma > 0.0) {
            return Err(Error::Config("blur_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Extract shape images for a whole batch. Labels and groups pass through.
pub fn extract_shape(batch: &ImageBatch, cfg: &ShapeExtractorConfig) -> Result<ImageBatch> {
    cfg.validate()?;
    batch.ensure_finite("extract_shape input")?;
    let (c, h, w) = batch.sample_shape();
    if c != 1 && c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "extract_shape expects 1 or 3 channels, got {c}"
        )));
    }
    if h < cfg.blur_kernel || w < cfg.blur_kernel {
        return Err(Error::ShapeMismatch(format!(
            "image {h}x{w} smaller than blur kernel {}",
            cfg.blur_kernel
        )));
    }
    let n = batch.len();
    let maps = par::map_collect(n, |i| extract_image(batch.image(i), cfg));
    let out_c = match cfg.output_channels {
        OutputChannels::Replicate3 => 3,
        OutputChannels::Single => 1,
    };
    let mut images = Array4::zeros((n, out_c, h, w));
    for (i, map) in maps.into_iter().enumerate() {
        for ch in 0..out_c {
            images
                .index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(0), ch)
                .assign(&map);
        }
    }
    let mut out = ImageBatch::new(images, batch.labels.clone(), batch.num_classes)?;
    if let Some(groups) = &batch.groups {
        out = out.with_groups(groups.clone())?;
    }
    Ok(out)
}

/// Shape map for one image, `(h, w)` in `[0, 1]`.
pub fn extract_image(image: ArrayView3<'_, f32>, cfg: &ShapeExtractorConfig) -> Array2<f32> {
    let gray = grayscale(&image);
    let (h, w) = gray.dim();
    let up = resize_bilinear(
        &gray.view(),
        h * cfg.upsample_factor,
        w * cfg.upsample_factor,
    );
    let blurred = gaussian_blur(&up, cfg.blur_kernel, cfg.blur_sigma);
    let dx = convolve3(&blurred, &SOBEL_X);
    let dy = convolve3(&blurred, &SOBEL_Y);
    let mut mag = Array2::zeros(blurred.dim());
    ndarray::Zip::from(&mut mag)
        .and(&dx)
        .and(&dy)
        .for_each(|m, &a, &b| *m = (a * a + b * b).sqrt());
    let mut down = resize_bilinear(&mag.view(), h, w);
    let max = down.iter().cloned().fold(0.0f32, f32::max);
    if max > NORM_FLOOR {
        down.mapv_inplace(|v| (v / max).clamp(0.0, 1.0));
    } else {
        down.fill(0.0);
    }
    down
}

fn grayscale(image: &ArrayView3<'_, f32>) -> Array2<f32> {
    let (c, h, w) = image.dim();
    if c == 1 {
        return image.index_axis(Axis(0), 0).to_owned();
    }
    let mut gray = Array2::zeros((h, w));
    for ch in 0..3 {
        let plane = image.index_axis(Axis(0), ch);
        ndarray::Zip::from(&mut gray)
            .and(&plane)
            .for_each(|g, &v| *g += LUMA[ch] * v);
    }
    gray
}

/// Bilinear resampling on pixel centers with edge clamping.
///
/// Lerp form: flat regions reproduce exactly, so a constant image stays
/// constant through the up/down-sampling round trip.
pub(crate) fn resize_bilinear(src: &ArrayView2<'_, f32>, oh: usize, ow: usize) -> Array2<f32> {
    let (ih, iw) = src.dim();
    let mut out = Array2::zeros((oh, ow));
    for oy in 0..oh {
        let sy = (oy as f32 + 0.5) * ih as f32 / oh as f32 - 0.5;
        let y0 = sy.floor();
        let fy = sy - y0;
        let y0c = (y0 as isize).clamp(0, ih as isize - 1) as usize;
        let y1c = (y0 as isize + 1).clamp(0, ih as isize - 1) as usize;
        for ox in 0..ow {
            let sx = (ox as f32 + 0.5) * iw as f32 / ow as f32 - 0.5;
            let x0 = sx.floor();
            let fx = sx - x0;
            let x0c = (x0 as isize).clamp(0, iw as isize - 1) as usize;
            let x1c = (x0 as isize + 1).clamp(0, iw as isize - 1) as usize;
            let top = src[[y0c, x0c]] + fx * (src[[y0c, x1c]] - src[[y0c, x0c]]);
            let bot = src[[y1c, x0c]] + fx * (src[[y1c, x1c]] - src[[y1c, x0c]]);
            out[[oy, ox]] = top + fy * (bot - top);
        }
    }
    out
}

/// Separable Gaussian blur with replicate borders.
pub(crate) fn gaussian_blur(src: &Array2<f32>, kernel: usize, sigma: f32) -> Array2<f32> {
    let r = (kernel / 2) as isize;
    let mut weights = Vec::with_capacity(kernel);
    let mut sum = 0.0f32;
    for i in -r..=r {
        let w = (-(i * i) as f32 / (2.0 * sigma * sigma)).exp();
        weights.push(w);
        sum += w;
    }
    for w in &mut weights {
        *w /= sum;
    }
    let (h, w) = src.dim();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut horiz = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (k, &wt) in weights.iter().enumerate() {
                acc += wt * src[[y, clamp(x as isize + k as isize - r, w)]];
            }
            horiz[[y, x]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (k, &wt) in weights.iter().enumerate() {
                acc += wt * horiz[[clamp(y as isize + k as isize - r, h), x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// 2-D signal-processing convolution with a 3x3 kernel, replicate borders.
pub(crate) fn convolve3(src: &Array2<f32>, kernel: &[[f32; 3]; 3]) -> Array2<f32> {
    let (h, w) = src.dim();
    let clampy = |v: isize| v.clamp(0, h as isize - 1) as usize;
    let clampx = |v: isize| v.clamp(0, w as isize - 1) as usize;
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            // positive and negative taps accumulate separately so that on a
            // flat patch both partial sums are float-identical and the
            // difference is exactly zero
            let mut pos = 0.0f32;
            let mut neg = 0.0f32;
            for ky in 0..3isize {
                for kx in 0..3isize {
                    // convolution flips the kernel relative to correlation
                    let sy = clampy(y as isize - (ky - 1));
                    let sx = clampx(x as isize - (kx - 1));
                    let wt = kernel[ky as usize][kx as usize];
                    if wt > 0.0 {
                        pos += wt * src[[sy, sx]];
                    } else if wt < 0.0 {
                        neg += -wt * src[[sy, sx]];
                    }
                }
            }
            out[[y, x]] = pos - neg;
        }
    }
    out
}
