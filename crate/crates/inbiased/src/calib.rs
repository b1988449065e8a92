//! Expected calibration error and reliability diagrams.
//!
//! Predictions are bucketed into 15 equal-width, right-closed confidence
//! bins; the report carries per-bin counts, mean confidence, and
//! accuracy, and the ECE is the count-weighted mean absolute gap between
//! confidence and accuracy.

use crate::batch::ImageBatch;
use crate::error::{Error, Result};
use crate::losses::softmax;
use crate::models::Model;
use crate::num::Scalar;
use crate::trainer::predict_logits;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Number of confidence bins.
pub const NUM_BINS: usize = 15;

/// One confidence bin covering `(lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Calibration summary over a prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
    pub total: usize,
    pub accuracy: f64,
    pub mean_confidence: f64,
}

/// Bin index for a confidence value: bin i covers (i/15, (i+1)/15],
/// right-closed, with everything ≤ 1/15 (including a pathological 0)
/// landing in bin 0.
fn bin_index(confidence: f64) -> usize {
    if confidence <= 0.0 {
        return 0;
    }
    let idx = (confidence * NUM_BINS as f64).ceil() as usize;
    idx.saturating_sub(1).min(NUM_BINS - 1)
}

/// Build a reliability report from per-sample probability rows. Each row
/// must be a probability vector; the prediction is the argmax and its
/// probability the confidence.
pub fn reliability_report(probs: &ArrayView2<'_, f64>, labels: &[u32]) -> Result<ReliabilityReport> {
    let n = probs.nrows();
    if n == 0 {
        return Err(Error::Data("calibration on an empty set".into()));
    }
    if n != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{n} probability rows vs {} labels",
            labels.len()
        )));
    }
    if probs.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0 + 1e-9) {
        return Err(Error::NonFinite(
            "calibration probabilities must lie in [0,1]".into(),
        ));
    }

    let mut count = [0usize; NUM_BINS];
    let mut conf_sum = [0f64; NUM_BINS];
    let mut correct = [0usize; NUM_BINS];
    for (row, &label) in probs.axis_iter(Axis(0)).zip(labels) {
        let mut best = 0usize;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        let confidence = row[best];
        let b = bin_index(confidence);
        count[b] += 1;
        conf_sum[b] += confidence;
        if best == label as usize {
            correct[b] += 1;
        }
    }

    let width = 1.0 / NUM_BINS as f64;
    let mut bins = Vec::with_capacity(NUM_BINS);
    let mut ece = 0.0;
    for b in 0..NUM_BINS {
        let (mean_confidence, accuracy) = if count[b] > 0 {
            (
                conf_sum[b] / count[b] as f64,
                correct[b] as f64 / count[b] as f64,
            )
        } else {
            (0.0, 0.0)
        };
        if count[b] > 0 {
            ece += count[b] as f64 / n as f64 * (accuracy - mean_confidence).abs();
        }
        bins.push(ReliabilityBin {
            lo: b as f64 * width,
            hi: (b + 1) as f64 * width,
            count: count[b],
            mean_confidence,
            accuracy,
        });
    }
    let total_correct: usize = correct.iter().sum();
    let total_conf: f64 = conf_sum.iter().sum();
    Ok(ReliabilityReport {
        bins,
        ece,
        total: n,
        accuracy: total_correct as f64 / n as f64,
        mean_confidence: total_conf / n as f64,
    })
}

/// Softmax probabilities of a model on a batch, in f64.
pub fn predict_probs<F: Scalar>(
    model: &mut dyn Model<F>,
    batch: &ImageBatch,
    batch_size: usize,
) -> Array2<f64> {
    let logits = predict_logits(model, &batch.images, batch_size);
    softmax(&logits.view()).mapv(|v| v.to_f64().unwrap_or(f64::NAN))
}

/// Calibration of a model's own predictions on a batch.
pub fn calibrate_model<F: Scalar>(
    model: &mut dyn Model<F>,
    batch: &ImageBatch,
    batch_size: usize,
) -> Result<ReliabilityReport> {
    let probs = predict_probs(model, batch, batch_size);
    reliability_report(&probs.view(), &batch.labels)
}
