//! Bundled procedural corpora: stroke-rendered digits and SDF-rendered
//! shapes.
//!
//! These generators produce the entire dataset from a seed, so experiments
//! run on machines with no dataset downloads at all. Digits are 28x28
//! polyline skeletons with random affine jitter, stroke width, and noise;
//! shapes are 32x32 masks of ten geometric classes composited over smooth
//! random backgrounds with random object colors. Pixels are quantized to
//! the u8 grid at construction so a lossless image round-trip reproduces
//! the in-memory tensors bit for bit.

use crate::batch::ImageBatch;
use crate::error::Result;
use crate::par;
use crate::rng::stream;
use ndarray::{Array2, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const DIGIT_SIZE: usize = 28;
pub const SHAPE_SIZE: usize = 32;

/// Snap to the 8-bit grid: `round(v*255)/255`, clamped to `[0, 1]`.
pub fn quantize_u8(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let t = a0 + (a1 - a0) * i as f64 / (n - 1) as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Polyline skeletons for the ten digit classes, in `[0,1]^2`, y down.
fn digit_skeleton(label: usize) -> Vec<Vec<(f64, f64)>> {
    use std::f64::consts::PI;
    match label {
        0 => vec![arc(0.5, 0.5, 0.28, 0.38, 0.0, 2.0 * PI, 40)],
        1 => vec![vec![(0.35, 0.3), (0.55, 0.12), (0.55, 0.88)]],
        2 => {
            let mut p = arc(0.5, 0.32, 0.26, 0.2, PI, 2.0 * PI + 0.6, 20);
            p.push((0.3, 0.88));
            p.push((0.78, 0.88));
            vec![p]
        }
        3 => vec![
            arc(0.48, 0.3, 0.24, 0.18, PI * 1.15, 2.0 * PI + PI * 0.45, 20),
            arc(0.48, 0.68, 0.27, 0.21, PI * 1.55, 2.0 * PI + PI * 0.85, 20),
        ],
        4 => vec![vec![(0.62, 0.88), (0.62, 0.12), (0.22, 0.62), (0.8, 0.62)]],
        5 => {
            let mut p = vec![(0.72, 0.12), (0.32, 0.12), (0.3, 0.45)];
            p.extend(arc(0.48, 0.64, 0.24, 0.22, PI * 1.4, 2.0 * PI + PI * 0.8, 20));
            vec![p]
        }
        6 => vec![
            arc(0.48, 0.66, 0.22, 0.22, 0.0, 2.0 * PI, 28),
            vec![(0.62, 0.14), (0.4, 0.42), (0.28, 0.66)],
        ],
        7 => vec![vec![(0.24, 0.12), (0.76, 0.12), (0.44, 0.88)]],
        8 => vec![
            arc(0.5, 0.3, 0.2, 0.18, 0.0, 2.0 * PI, 24),
            arc(0.5, 0.68, 0.24, 0.2, 0.0, 2.0 * PI, 24),
        ],
        9 => vec![
            arc(0.52, 0.34, 0.22, 0.22, 0.0, 2.0 * PI, 28),
            vec![(0.74, 0.34), (0.66, 0.62), (0.5, 0.88)],
        ],
        _ => unreachable!("digit label must be 0..=9"),
    }
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (px - a.0, py - a.1);
    let c2 = vx * vx + vy * vy;
    let t = if c2 <= 1e-12 {
        0.0
    } else {
        (vx * wx + vy * wy) / c2
    }
    .clamp(0.0, 1.0);
    let dx = px - (a.0 + t * vx);
    let dy = py - (a.1 + t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// One grayscale digit with random pose, stroke width, and noise.
pub fn render_digit(label: usize, rng: &mut ChaCha8Rng, size: usize) -> Array2<f32> {
    let rot: f64 = rng.gen_range(-0.30..0.30);
    let scale: f64 = rng.gen_range(0.70..1.05);
    let shear: f64 = rng.gen_range(-0.18..0.18);
    let tx: f64 = rng.gen_range(-0.08..0.08);
    let ty: f64 = rng.gen_range(-0.08..0.08);
    let width: f64 = rng.gen_range(0.045..0.08);
    let (cr, sr) = (rot.cos(), rot.sin());
    let polys: Vec<Vec<(f64, f64)>> = digit_skeleton(label)
        .into_iter()
        .map(|poly| {
            poly.into_iter()
                .map(|(x, y)| {
                    let (u, v) = (x - 0.5, y - 0.5);
                    let u = u + shear * v;
                    let u2 = cr * u - sr * v;
                    let v2 = sr * u + cr * v;
                    (0.5 + scale * u2 + tx, 0.5 + scale * v2 + ty)
                })
                .collect()
        })
        .collect();

    let aa = 0.022;
    let mut img = Array2::<f32>::zeros((size, size));
    for iy in 0..size {
        for ix in 0..size {
            let px = (ix as f64 + 0.5) / size as f64;
            let py = (iy as f64 + 0.5) / size as f64;
            let mut d = f64::INFINITY;
            for pts in &polys {
                for seg in pts.windows(2) {
                    d = d.min(segment_distance(px, py, seg[0], seg[1]));
                }
            }
            let t = (d - width) / aa;
            img[[iy, ix]] = if t <= 0.0 {
                1.0
            } else if t < 1.0 {
                (1.0 - t) as f32
            } else {
                0.0
            };
        }
    }
    let brightness: f64 = rng.gen_range(0.85..1.0);
    for v in img.iter_mut() {
        let noise: f64 = rng.gen_range(0.0..0.08);
        *v = quantize_u8((*v as f64 * brightness + noise) as f32);
    }
    img
}

/// Binary mask of one of ten geometric shape classes at a random pose.
pub fn shape_mask(class: usize, rng: &mut ChaCha8Rng, size: usize) -> Array2<f32> {
    let rot: f64 = rng.gen_range(0.0..(2.0 * std::f64::consts::PI));
    let sc: f64 = rng.gen_range(0.55..0.8);
    let cx: f64 = 0.5 + rng.gen_range(-0.08..0.08);
    let cy: f64 = 0.5 + rng.gen_range(-0.08..0.08);
    let (cr, sr) = (rot.cos(), rot.sin());
    let big_r = sc * 0.5;
    let mut m = Array2::<f32>::zeros((size, size));
    for iy in 0..size {
        for ix in 0..size {
            let x = (ix as f64 + 0.5) / size as f64 - cx;
            let y = (iy as f64 + 0.5) / size as f64 - cy;
            let u = cr * x - sr * y;
            let v = sr * x + cr * y;
            let r = (u * u + v * v).sqrt();
            let th = v.atan2(u);
            let inside = match class {
                0 => r < big_r * 0.8,
                1 => (r - big_r * 0.75).abs() < big_r * 0.22,
                2 => u.abs().max(v.abs()) < big_r * 0.68,
                3 => v > -big_r * 0.5 && u.abs() < big_r * 0.62 - v * 0.72,
                4 => r < big_r * (0.55 + 0.4 * (5.0 * th).cos()),
                5 => {
                    let (a, b) = (big_r * 0.25, big_r * 0.85);
                    (u.abs() < a && v.abs() < b) || (v.abs() < a && u.abs() < b)
                }
                6 => u.abs() + v.abs() < big_r * 0.9,
                7 => {
                    u.abs() < big_r * 0.75
                        && ((v - big_r * 0.42).abs() < big_r * 0.2
                            || (v + big_r * 0.42).abs() < big_r * 0.2)
                }
                8 => {
                    let h = ((u - big_r * 0.38).powi(2) + v * v).sqrt();
                    r < big_r * 0.8 && h > big_r * 0.55
                }
                9 => u.abs().max(v.abs()) < big_r * 0.75 && (u > 0.0) == (v > 0.0),
                _ => unreachable!("shape class must be 0..=9"),
            };
            if inside {
                m[[iy, ix]] = 1.0;
            }
        }
    }
    m
}

/// RGB image: a random-colored shape over a smooth random background plus
/// pixel noise, quantized to the u8 grid.
pub fn render_shape_image(class: usize, rng: &mut ChaCha8Rng, size: usize) -> Array4<f32> {
    let mask = shape_mask(class, rng, size);
    let g0: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..0.9));
    let g1: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..0.9));
    let dirx: f64 = rng.gen_range(-1.0..1.0);
    let diry: f64 = rng.gen_range(-1.0..1.0);
    let norm = (dirx * dirx + diry * diry).sqrt() + 1e-9;
    let (dirx, diry) = (dirx / norm, diry / norm);
    let obj: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.15..1.0));
    let mut img = Array4::<f32>::zeros((1, 3, size, size));
    for c in 0..3 {
        for iy in 0..size {
            for ix in 0..size {
                let xx = ix as f64 / size as f64;
                let yy = iy as f64 / size as f64;
                let t = ((xx - 0.5) * dirx + (yy - 0.5) * diry + 0.5).clamp(0.0, 1.0);
                let bg = g0[c] * (1.0 - t) + g1[c] * t;
                let m = mask[[iy, ix]] as f64;
                img[[0, c, iy, ix]] = (bg * (1.0 - m) + obj[c] * m) as f32;
            }
        }
    }
    for v in img.iter_mut() {
        let noise: f64 = rng.gen_range(-0.05..0.05);
        *v = quantize_u8(*v + noise as f32);
    }
    img
}

/// Grayscale digit batch (channel replicated to 3). Labels are drawn
/// uniformly; every sample uses its own derived stream so generation
/// parallelizes without changing content.
pub fn digit_batch(n: usize, seed: u64, label_stream: &str) -> Result<ImageBatch> {
    let mut label_rng = stream(seed, label_stream);
    let labels: Vec<u32> = (0..n).map(|_| label_rng.gen_range(0..10u32)).collect();
    let rendered = {
        let labels = &labels;
        par::map_collect(n, move |i| {
            let mut rng = stream(seed, &format!("{label_stream}/img/{i}"));
            render_digit(labels[i] as usize, &mut rng, DIGIT_SIZE)
        })
    };
    let mut images = Array4::zeros((n, 3, DIGIT_SIZE, DIGIT_SIZE));
    for (i, gray) in rendered.into_iter().enumerate() {
        for c in 0..3 {
            images
                .index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(0), c)
                .assign(&gray);
        }
    }
    ImageBatch::new(images, labels, 10)
}

/// Raw grayscale digits (single channel), the base for the colored
/// variants.
pub fn digit_planes(n: usize, seed: u64, label_stream: &str) -> Result<(Vec<Array2<f32>>, Vec<u32>)> {
    let mut label_rng = stream(seed, label_stream);
    let labels: Vec<u32> = (0..n).map(|_| label_rng.gen_range(0..10u32)).collect();
    let rendered = {
        let labels = &labels;
        par::map_collect(n, move |i| {
            let mut rng = stream(seed, &format!("{label_stream}/img/{i}"));
            render_digit(labels[i] as usize, &mut rng, DIGIT_SIZE)
        })
    };
    Ok((rendered, labels))
}

/// Shape-classification batch with random object colors.
pub fn shape_batch(n: usize, seed: u64, label_stream: &str) -> Result<ImageBatch> {
    let mut label_rng = stream(seed, label_stream);
    let labels: Vec<u32> = (0..n).map(|_| label_rng.gen_range(0..10u32)).collect();
    let rendered = {
        let labels = &labels;
        par::map_collect(n, move |i| {
            let mut rng = stream(seed, &format!("{label_stream}/img/{i}"));
            render_shape_image(labels[i] as usize, &mut rng, SHAPE_SIZE)
        })
    };
    let mut images = Array4::zeros((n, 3, SHAPE_SIZE, SHAPE_SIZE));
    for (i, img) in rendered.into_iter().enumerate() {
        images
            .index_axis_mut(Axis(0), i)
            .assign(&img.index_axis(Axis(0), 0));
    }
    ImageBatch::new(images, labels, 10)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digit_batch_is_deterministic_and_in_range() {
        let a = digit_batch(8, 11, "train").unwrap();
        let b = digit_batch(8, 11, "train").unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
        assert!(a.images.iter().all(|v| (0.0..=1.0).contains(v)));
        // quantized to the u8 grid
        assert!(a
            .images
            .iter()
            .all(|v| (v * 255.0 - (v * 255.0).round()).abs() < 1e-4));
    }

    #[test]
    fn different_seeds_differ() {
        let a = digit_batch(4, 1, "train").unwrap();
        let b = digit_batch(4, 2, "train").unwrap();
        assert_ne!(a.images, b.images);
    }

    #[test]
    fn splits_are_decorrelated() {
        let a = digit_batch(4, 1, "train").unwrap();
        let b = digit_batch(4, 1, "test").unwrap();
        assert_ne!(a.images, b.images);
    }

    #[test]
    fn digits_have_visible_strokes() {
        let batch = digit_batch(20, 3, "train").unwrap();
        for i in 0..batch.len() {
            let img = batch.image(i);
            let bright = img.iter().filter(|&&v| v > 0.5).count();
            let frac = bright as f64 / img.len() as f64;
            assert!(
                (0.02..0.6).contains(&frac),
                "digit {i} stroke fraction {frac} out of range"
            );
        }
    }

    #[test]
    fn shape_classes_are_distinguishable_masks() {
        let mut rng = stream(5, "test/shapes");
        for class in 0..10 {
            let m = shape_mask(class, &mut rng, SHAPE_SIZE);
            let area = m.sum() / (SHAPE_SIZE * SHAPE_SIZE) as f32;
            assert!(
                (0.02..0.7).contains(&area),
                "class {class} area {area} out of range"
            );
        }
    }

    #[test]
    fn shape_batch_quantized_and_labeled() {
        let batch = shape_batch(12, 9, "train").unwrap();
        assert_eq!(batch.sample_shape(), (3, SHAPE_SIZE, SHAPE_SIZE));
        assert_eq!(batch.num_classes, 10);
        assert!(batch.labels.iter().all(|&l| l < 10));
        assert!(batch
            .images
            .iter()
            .all(|v| (v * 255.0 - (v * 255.0).round()).abs() < 1e-4));
    }

    #[test]
    fn parallel_generation_matches_sequential() {
        let par_batch = digit_batch(6, 17, "train").unwrap();
        crate::par::force_sequential(true);
        let seq_batch = digit_batch(6, 17, "train").unwrap();
        crate::par::force_sequential(false);
        assert_eq!(par_batch.images, seq_batch.images);
    }
}
