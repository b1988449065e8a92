//! STL-10 binary-format loader.
//!
//! Expected layout under the data root: `stl10/train_X.bin`,
//! `stl10/train_y.bin`, `stl10/test_X.bin`, `stl10/test_y.bin`. Images
//! are 96x96x3 with column-major pixel order inside each channel plane,
//! and labels on disk are 1-based.

use crate::batch::ImageBatch;
use crate::data::Split;
use crate::error::{Error, Result};
use ndarray::Array4;
use std::path::Path;

pub const SIDE: usize = 96;
const PIXELS: usize = 3 * SIDE * SIDE;

/// STL-10 from `root/stl10/`.
pub fn load_stl10(root: &Path, split: Split, count: Option<usize>) -> Result<ImageBatch> {
    let dir = root.join("stl10");
    let (x_name, y_name) = match split {
        Split::Train => ("train_X.bin", "train_y.bin"),
        Split::Test => ("test_X.bin", "test_y.bin"),
    };
    let x_path = dir.join(x_name);
    let y_path = dir.join(y_name);
    for p in [&x_path, &y_path] {
        if !p.exists() {
            return Err(Error::Data(format!(
                "missing STL-10 file: expected {}",
                p.display()
            )));
        }
    }
    let x_bytes = std::fs::read(&x_path)?;
    let y_bytes = std::fs::read(&y_path)?;
    if x_bytes.len() % PIXELS != 0 {
        return Err(Error::Data(format!(
            "{}: size {} is not a multiple of {} bytes per image",
            x_path.display(),
            x_bytes.len(),
            PIXELS
        )));
    }
    let n_total = x_bytes.len() / PIXELS;
    if y_bytes.len() != n_total {
        return Err(Error::Data(format!(
            "{}: {} labels for {} images",
            y_path.display(),
            y_bytes.len(),
            n_total
        )));
    }
    let n = count.map_or(n_total, |c| c.min(n_total));
    let mut images = Array4::<f32>::zeros((n, 3, SIDE, SIDE));
    for i in 0..n {
        let base = i * PIXELS;
        for c in 0..3 {
            for x in 0..SIDE {
                for y in 0..SIDE {
                    // column-major within each channel plane
                    let b = x_bytes[base + c * SIDE * SIDE + x * SIDE + y];
                    images[[i, c, y, x]] = b as f32 / 255.0;
                }
            }
        }
    }
    let mut labels = Vec::with_capacity(n);
    for &b in &y_bytes[..n] {
        if !(1..=10).contains(&b) {
            return Err(Error::Data(format!(
                "{}: label byte {b} outside the 1..=10 range",
                y_path.display()
            )));
        }
        labels.push(b as u32 - 1);
    }
    ImageBatch::new(images, labels, 10)
}
