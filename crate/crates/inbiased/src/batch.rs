//! Labeled image batches.

use crate::error::{Error, Result};
use ndarray::{Array4, ArrayView3};

/// A labeled batch of images in `[0, 1]`, laid out `(n, channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub images: Array4<f32>,
    /// Class index per sample.
    pub labels: Vec<u32>,
    /// Number of classes in the originating dataset.
    pub num_classes: usize,
    /// Optional per-sample group tag (e.g. skew groups `B-F`, `NB-M`).
    pub groups: Option<Vec<String>>,
}

impl ImageBatch {
    pub fn new(images: Array4<f32>, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if images.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} images vs {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            groups: None,
        })
    }

    pub fn with_groups(mut self, groups: Vec<String>) -> Result<Self> {
        if groups.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} groups vs {} samples",
                groups.len(),
                self.len()
            )));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(channels, height, width)` of a single sample.
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn image(&self, i: usize) -> ArrayView3<'_, f32> {
        self.images.index_axis(ndarray::Axis(0), i)
    }

    /// Select a sub-batch by sample indices (clones pixel data).
    pub fn select(&self, indices: &[usize]) -> ImageBatch {
        let (c, h, w) = self.sample_shape();
        let mut images = Array4::zeros((indices.len(), c, h, w));
        let mut labels = Vec::with_capacity(indices.len());
        let mut groups = self.groups.as_ref().map(|_| Vec::with_capacity(indices.len()));
        for (row, &i) in indices.iter().enumerate() {
            images
                .index_axis_mut(ndarray::Axis(0), row)
                .assign(&self.image(i));
            labels.push(self.labels[i]);
            if let (Some(out), Some(src)) = (groups.as_mut(), self.groups.as_ref()) {
                out.push(src[i].clone());
            }
        }
        ImageBatch {
            images,
            labels,
            num_classes: self.num_classes,
            groups,
        }
    }

    /// First `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> ImageBatch {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Fail on NaN or infinity anywhere in the pixel data.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.images.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{context}: image batch")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_count_must_match() {
        let images = Array4::zeros((2, 3, 4, 4));
        assert!(ImageBatch::new(images, vec![0], 2).is_err());
    }

    #[test]
    fn select_keeps_groups_aligned() {
        let images = Array4::from_elem((3, 1, 2, 2), 0.5);
        let b = ImageBatch::new(images, vec![0, 1, 2], 3)
            .unwrap()
            .with_groups(vec!["a".into(), "b".into(), "c".into()])
            .unwrap();
        let s = b.select(&[2, 0]);
        assert_eq!(s.labels, vec![2, 0]);
        assert_eq!(s.groups.unwrap(), vec!["c".to_string(), "a".to_string()]);
    }

    #[test]
    fn non_finite_rejected() {
        let mut images = Array4::zeros((1, 1, 2, 2));
        images[[0, 0, 0, 0]] = f32::NAN;
        let b = ImageBatch::new(images, vec![0], 2).unwrap();
        assert!(b.ensure_finite("test").is_err());
    }
}
