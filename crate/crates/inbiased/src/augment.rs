//! Training-time augmentation.
//!
//! `CropFlip` is the standard pad-4 random crop plus horizontal flip.
//! Offsets and flip decisions are drawn sequentially up front, then
//! applied per sample, so parallel and sequential application produce
//! identical pixels.

use crate::par;
use crate::rng::stream;
use ndarray::{Array4, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    #[default]
    CropFlip,
    None,
}

impl FromStr for Augmentation {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "crop_flip" => Ok(Augmentation::CropFlip),
            "none" => Ok(Augmentation::None),
            other => Err(crate::Error::Config(format!(
                "unknown augmentation '{other}' (expected crop_flip or none)"
            ))),
        }
    }
}

/// Zero-padding width for the random crop: 4 at 32 px, 12 at 96 px,
/// scaling as one eighth of the image height (at least 1).
pub fn crop_padding(height: usize) -> usize {
    (height / 8).max(1)
}

struct SampleDraw {
    dy: usize,
    dx: usize,
    flip: bool,
}

fn crop_flip_one(src: &ArrayView3<'_, f32>, draw: &SampleDraw, p: usize) -> ndarray::Array3<f32> {
    let (c, h, w) = (src.shape()[0], src.shape()[1], src.shape()[2]);
    let mut out = ndarray::Array3::<f32>::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                // coordinates in the zero-padded (h+2p, w+2p) canvas
                let sy = y + draw.dy;
                let sx = if draw.flip { w - 1 - x } else { x } + draw.dx;
                let v = if sy >= p && sy < h + p && sx >= p && sx < w + p {
                    src[[ch, sy - p, sx - p]]
                } else {
                    0.0
                };
                out[[ch, y, x]] = v;
            }
        }
    }
    out
}

/// Apply the augmentation to every sample, with randomness from the
/// stream `(seed, label)`. `Augmentation::None` returns the input
/// unchanged.
pub fn augment(images: &Array4<f32>, aug: Augmentation, seed: u64, label: &str) -> Array4<f32> {
    match aug {
        Augmentation::None => images.clone(),
        Augmentation::CropFlip => {
            let n = images.shape()[0];
            let p = crop_padding(images.shape()[2]);
            let mut rng = stream(seed, label);
            let draws: Vec<SampleDraw> = (0..n)
                .map(|_| SampleDraw {
                    dy: rng.gen_range(0..=2 * p),
                    dx: rng.gen_range(0..=2 * p),
                    flip: rng.gen_bool(0.5),
                })
                .collect();
            let samples = par::map_collect(n, |i| {
                crop_flip_one(&images.index_axis(Axis(0), i), &draws[i], p)
            });
            let mut out = images.clone();
            for (i, s) in samples.into_iter().enumerate() {
                out.index_axis_mut(Axis(0), i).assign(&s);
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_images() -> Array4<f32> {
        Array4::from_shape_fn((3, 2, 8, 8), |(n, c, y, x)| {
            (n * 64 + c * 7 + y * 8 + x) as f32 / 300.0
        })
    }

    #[test]
    fn none_is_identity() {
        let images = demo_images();
        assert_eq!(augment(&images, Augmentation::None, 0, "aug"), images);
    }

    #[test]
    fn crop_flip_is_deterministic_per_stream() {
        let images = demo_images();
        let a = augment(&images, Augmentation::CropFlip, 5, "aug/0");
        let b = augment(&images, Augmentation::CropFlip, 5, "aug/0");
        let c = augment(&images, Augmentation::CropFlip, 5, "aug/1");
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn padding_scales_with_image_size() {
        assert_eq!(crop_padding(32), 4);
        assert_eq!(crop_padding(96), 12);
        assert_eq!(crop_padding(28), 3);
        assert_eq!(crop_padding(8), 1);
    }

    #[test]
    fn centered_draw_with_no_flip_recovers_the_input() {
        let images = demo_images();
        let src = images.index_axis(Axis(0), 0);
        let p = crop_padding(8);
        let out = crop_flip_one(
            &src,
            &SampleDraw {
                dy: p,
                dx: p,
                flip: false,
            },
            p,
        );
        assert_eq!(out, src.to_owned());
    }

    #[test]
    fn corner_crop_introduces_zero_padding() {
        let images = Array4::from_elem((1, 1, 32, 32), 1.0f32);
        let out = crop_flip_one(
            &images.index_axis(Axis(0), 0),
            &SampleDraw {
                dy: 0,
                dx: 0,
                flip: false,
            },
            crop_padding(32),
        );
        // shifting fully toward the corner exposes the 4-pixel zero band
        assert_eq!(out[[0, 0, 0]], 0.0);
        assert_eq!(out[[0, 3, 3]], 0.0);
        assert_eq!(out[[0, 4, 4]], 1.0);
    }

    #[test]
    fn flip_mirrors_horizontally() {
        let images = demo_images();
        let src = images.index_axis(Axis(0), 0);
        let p = crop_padding(8);
        let out = crop_flip_one(
            &src,
            &SampleDraw {
                dy: p,
                dx: p,
                flip: true,
            },
            p,
        );
        for c in 0..src.shape()[0] {
            for y in 0..8 {
                for x in 0..8 {
                    assert_eq!(out[[c, y, x]], src[[c, y, 7 - x]]);
                }
            }
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let images = demo_images();
        let par_out = augment(&images, Augmentation::CropFlip, 9, "aug");
        crate::par::force_sequential(true);
        let seq_out = augment(&images, Augmentation::CropFlip, 9, "aug");
        crate::par::force_sequential(false);
        assert_eq!(par_out, seq_out);
    }
}
