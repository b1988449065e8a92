//! Color-biased digit datasets.
//!
//! Training splits paint each digit (foreground), its background, or both
//! with a palette color chosen by the class label, planting a spurious
//! color shortcut that is perfectly predictive during training. Test
//! splits draw colors uniformly at random, independent of the label, so a
//! model that latched onto color collapses while a shape-driven model is
//! unaffected.

use crate::batch::ImageBatch;
use crate::data::palette::ColorPalette;
use crate::data::synth::{digit_planes, quantize_u8};
use crate::data::Split;
use crate::error::Result;
use crate::rng::stream;
use ndarray::{Array2, Array4};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Which region of the image carries the label-correlated color.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorScheme {
    Foreground,
    Background,
    Both,
}

/// Pixels brighter than this count as digit stroke when painting.
pub const FG_THRESHOLD: f32 = 0.1;

fn paint(
    gray: &Array2<f32>,
    scheme: ColorScheme,
    fg: [f32; 3],
    bg: [f32; 3],
) -> Array4<f32> {
    let (h, w) = gray.dim();
    let mut out = Array4::<f32>::zeros((1, 3, h, w));
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let g = gray[[y, x]];
                let is_fg = g > FG_THRESHOLD;
                let v = match scheme {
                    ColorScheme::Foreground => {
                        if is_fg {
                            g * fg[c]
                        } else {
                            0.0
                        }
                    }
                    ColorScheme::Background => {
                        if is_fg {
                            g
                        } else {
                            bg[c]
                        }
                    }
                    ColorScheme::Both => {
                        if is_fg {
                            g * fg[c]
                        } else {
                            bg[c]
                        }
                    }
                };
                out[[0, c, y, x]] = quantize_u8(v);
            }
        }
    }
    out
}

/// Color assignment for one sample: foreground and background palette
/// indices. Training colors follow the label; test colors are uniform and
/// label-independent (with distinct fg/bg for the two-color scheme).
fn assign_colors(
    split: Split,
    scheme: ColorScheme,
    label: u32,
    rng: &mut impl Rng,
) -> (usize, usize) {
    match split {
        Split::Train => {
            let fg = label as usize;
            let bg = (label as usize + 5) % 10;
            (fg, bg)
        }
        Split::Test => {
            let fg = rng.gen_range(0..10usize);
            let bg = match scheme {
                // distinct from fg: uniform over the other nine colors
                ColorScheme::Both => (fg + rng.gen_range(1..10usize)) % 10,
                _ => rng.gen_range(0..10usize),
            };
            (fg, bg)
        }
    }
}

fn group_tag(scheme: ColorScheme, fg: usize, bg: usize) -> String {
    match scheme {
        ColorScheme::Foreground => format!("c{fg}"),
        ColorScheme::Background => format!("c{bg}"),
        ColorScheme::Both => format!("c{fg}-{bg}"),
    }
}

/// First palette index recorded in a group tag produced by this module.
pub fn parse_color_index(tag: &str) -> Option<usize> {
    let digits: String = tag
        .strip_prefix('c')?
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

/// Color a set of grayscale planes according to the split rules. Shared
/// by the bundled digit corpus and file-loaded grayscale datasets.
pub fn colorize_planes(
    grays: &[Array2<f32>],
    labels: Vec<u32>,
    seed: u64,
    split: Split,
    scheme: ColorScheme,
    palette: &ColorPalette,
) -> Result<ImageBatch> {
    let n = grays.len();
    assert_eq!(n, labels.len());
    let (h, w) = if n > 0 { grays[0].dim() } else { (0, 0) };
    let mut color_rng = stream(seed, &format!("colors/{}", split.as_str()));
    let mut images = Array4::<f32>::zeros((n, 3, h, w));
    let mut groups = Vec::with_capacity(n);
    for i in 0..n {
        let (fg_idx, bg_idx) = assign_colors(split, scheme, labels[i], &mut color_rng);
        let painted = paint(&grays[i], scheme, palette.color(fg_idx), palette.color(bg_idx));
        images
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&painted.index_axis(ndarray::Axis(0), 0));
        groups.push(group_tag(scheme, fg_idx, bg_idx));
    }
    ImageBatch::new(images, labels, 10)?.with_groups(groups)
}

/// Build a color-biased digit batch from the bundled generator. The digit
/// geometry stream depends only on `(seed, split)`; color draws come from
/// a separate stream so the underlying digits match across schemes.
pub fn colored_digit_batch(
    n: usize,
    seed: u64,
    split: Split,
    scheme: ColorScheme,
    palette: &ColorPalette,
) -> Result<ImageBatch> {
    let (grays, labels) = digit_planes(n, seed, split.as_str())?;
    colorize_planes(&grays, labels, seed, split, scheme, palette)
}

/// Pearson chi-squared test of independence between labels and color
/// indices on a 10x10 contingency table. Returns `(statistic, p_value)`.
pub fn chi2_independence(labels: &[u32], colors: &[usize]) -> (f64, f64) {
    assert_eq!(labels.len(), colors.len());
    let n = labels.len() as f64;
    let mut table = [[0.0f64; 10]; 10];
    let mut row = [0.0f64; 10];
    let mut col = [0.0f64; 10];
    for (&l, &c) in labels.iter().zip(colors) {
        table[l as usize][c % 10] += 1.0;
        row[l as usize] += 1.0;
        col[c % 10] += 1.0;
    }
    let mut stat = 0.0;
    for (r, &row_sum) in row.iter().enumerate() {
        for (c, &col_sum) in col.iter().enumerate() {
            let expected = row_sum * col_sum / n;
            if expected > 0.0 {
                let diff = table[r][c] - expected;
                stat += diff * diff / expected;
            }
        }
    }
    // degrees of freedom count only rows/columns that actually occur
    let active_rows = row.iter().filter(|&&v| v > 0.0).count() as i64;
    let active_cols = col.iter().filter(|&&v| v > 0.0).count() as i64;
    let dof = (active_rows - 1).max(1) * (active_cols - 1).max(1);
    let dist = ChiSquared::new(dof as f64).expect("valid dof");
    let p = 1.0 - dist.cdf(stat);
    (stat, p)
}
