//! Radial low-pass filtering in the Fourier domain.
//!
//! Severity r maps to a keep-radius of N/2^(r+1) cycles (N = image
//! side): severity 0 keeps everything (identity), and each further step
//! halves the radius, so accuracy under the filter probes how much a
//! model leans on high-frequency content.

use crate::batch::ImageBatch;
use crate::error::{Error, Result};
use crate::par;
use ndarray::{Array2, ArrayViewMut2};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Highest supported severity.
pub const MAX_SEVERITY: u32 = 4;

/// Keep-radius (in frequency bins from the centred DC) for a severity
/// level on an N×N image.
pub fn severity_cutoff(side: usize, severity: u32) -> f64 {
    side as f64 / 2f64.powi(severity as i32 + 1)
}

/// Apply the radial low-pass at the given severity. Severity 0 returns
/// the input bit-identically; non-square images are rejected.
pub fn fourier_lowpass(batch: &ImageBatch, severity: u32) -> Result<ImageBatch> {
    if severity > MAX_SEVERITY {
        return Err(Error::Config(format!(
            "fourier severity must be 0..={MAX_SEVERITY}, got {severity}"
        )));
    }
    if severity == 0 {
        return Ok(batch.clone());
    }
    let (_, h, w) = batch.sample_shape();
    fourier_lowpass_cutoff(batch, severity_cutoff(h.max(w), severity))
}

/// Apply a radial low-pass with an explicit keep-radius: per channel,
/// 2-D DFT, zero every coefficient whose Euclidean distance from the
/// centred zero frequency exceeds `cutoff`, inverse DFT, real part,
/// clamp to [0,1].
pub fn fourier_lowpass_cutoff(batch: &ImageBatch, cutoff: f64) -> Result<ImageBatch> {
    let (_, h, w) = batch.sample_shape();
    if h != w {
        return Err(Error::ShapeMismatch(format!(
            "fourier filter requires square images, got {h}x{w}"
        )));
    }
    if !(cutoff >= 0.0) {
        return Err(Error::Config(format!(
            "fourier cutoff must be >= 0, got {cutoff}"
        )));
    }
    batch.ensure_finite("fourier input")?;
    let n = h;
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let keep = keep_mask(n, cutoff);

    let mut out = batch.images.clone();
    // One plane (sample × channel) per work item; planes are disjoint.
    let (nb, c) = (out.shape()[0], out.shape()[1]);
    let mut flat = out
        .view_mut()
        .into_shape((nb * c, n, n))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let mut planes: Vec<ArrayViewMut2<'_, f32>> = flat.outer_iter_mut().collect();
    par::for_each_mut(&mut planes, |_, plane| {
        filter_plane(plane, &keep, &forward, &inverse);
    });
    drop(planes);
    drop(flat);

    let mut filtered = ImageBatch::new(out, batch.labels.clone(), batch.num_classes)?;
    if let Some(groups) = &batch.groups {
        filtered = filtered.with_groups(groups.clone())?;
    }
    Ok(filtered)
}

/// Mask of frequency bins within `cutoff` of the centred DC. Index k of
/// an unshifted DFT corresponds to the centred coordinate k (k ≤ n/2)
/// or k−n (k > n/2), so no explicit shift is needed.
fn keep_mask(n: usize, cutoff: f64) -> Array2<bool> {
    let centred = |k: usize| -> f64 {
        if k <= n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        }
    };
    let limit = cutoff * cutoff;
    Array2::from_shape_fn((n, n), |(ky, kx)| {
        let (dy, dx) = (centred(ky), centred(kx));
        dy * dy + dx * dx <= limit
    })
}

fn filter_plane(
    plane: &mut ArrayViewMut2<'_, f32>,
    keep: &Array2<bool>,
    forward: &Arc<dyn Fft<f64>>,
    inverse: &Arc<dyn Fft<f64>>,
) {
    let n = plane.nrows();
    let mut grid: Vec<Complex64> = plane
        .iter()
        .map(|&v| Complex64::new(v as f64, 0.0))
        .collect();

    // Row-wise then column-wise 1-D transforms make up the 2-D DFT.
    for row in grid.chunks_mut(n) {
        forward.process(row);
    }
    transpose_in_place(&mut grid, n);
    for row in grid.chunks_mut(n) {
        forward.process(row);
    }
    transpose_in_place(&mut grid, n);

    for (c, &k) in grid.iter_mut().zip(keep.iter()) {
        if !k {
            *c = Complex64::new(0.0, 0.0);
        }
    }

    for row in grid.chunks_mut(n) {
        inverse.process(row);
    }
    transpose_in_place(&mut grid, n);
    for row in grid.chunks_mut(n) {
        inverse.process(row);
    }
    transpose_in_place(&mut grid, n);

    let scale = 1.0 / (n * n) as f64;
    for (dst, c) in plane.iter_mut().zip(grid.iter()) {
        *dst = (c.re * scale).clamp(0.0, 1.0) as f32;
    }
}

fn transpose_in_place(grid: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            grid.swap(i * n + j, j * n + i);
        }
    }
}

/// Accuracy of `model` on `batch` filtered at each severity.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeverityRow {
    pub severity: u32,
    pub accuracy: f64,
}

pub fn fourier_robustness<F: crate::num::Scalar>(
    model: &mut dyn crate::models::Model<F>,
    batch: &ImageBatch,
    batch_size: usize,
) -> Result<Vec<SeverityRow>> {
    if batch.is_empty() {
        return Err(Error::Data("fourier evaluation set is empty".into()));
    }
    let mut rows = Vec::new();
    for severity in 0..=MAX_SEVERITY {
        let filtered = fourier_lowpass(batch, severity)?;
        let logits = crate::trainer::predict_logits(model, &filtered.images, batch_size);
        let correct = crate::trainer::count_correct(&logits, &filtered.labels);
        rows.push(SeverityRow {
            severity,
            accuracy: correct as f64 / batch.len() as f64,
        });
    }
    Ok(rows)
}
