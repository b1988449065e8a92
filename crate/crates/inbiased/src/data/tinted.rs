//! Label-correlated color tinting.
//!
//! The training split blends every image toward the palette color of its
//! class: `x' = (1 - alpha) * x + alpha * palette[label]`. The test split
//! is the raw, untinted base data, so tinted training plants a color
//! shortcut that the test distribution does not honor.

use crate::batch::ImageBatch;
use crate::data::palette::ColorPalette;
use crate::data::synth::quantize_u8;
use crate::error::{Error, Result};

pub const DEFAULT_TINT_ALPHA: f64 = 0.3;

/// Blend each image toward its label's palette color and re-quantize to
/// the u8 grid. `alpha` must lie in `[0, 1]`.
pub fn tint_batch(mut batch: ImageBatch, palette: &ColorPalette, alpha: f64) -> Result<ImageBatch> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(Error::Config(format!(
            "tint alpha must be in [0, 1], got {alpha}"
        )));
    }
    let (c, _, _) = batch.sample_shape();
    if c != 3 {
        return Err(Error::Data(format!(
            "tinting requires 3-channel images, got {c} channels"
        )));
    }
    let a = alpha as f32;
    let labels = batch.labels.clone();
    for (i, &label) in labels.iter().enumerate() {
        let color = palette.color(label as usize);
        let mut img = batch.images.index_axis_mut(ndarray::Axis(0), i);
        for (ch, &tint) in color.iter().enumerate() {
            for v in img.index_axis_mut(ndarray::Axis(0), ch).iter_mut() {
                *v = quantize_u8((1.0 - a) * *v + a * tint);
            }
        }
    }
    Ok(batch)
}
