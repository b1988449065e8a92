//! CIFAR-10 / CIFAR-100 binary-format loaders.
//!
//! Expected layout under the data root:
//! `cifar10/data_batch_{1..5}.bin` + `cifar10/test_batch.bin` (3073-byte
//! records: label, then 3072 bytes of CHW pixels), and
//! `cifar100/train.bin` + `cifar100/test.bin` (3074-byte records: coarse
//! label, fine label, pixels). CIFAR-100 uses the fine label.

use crate::batch::ImageBatch;
use crate::data::Split;
use crate::error::{Error, Result};
use ndarray::Array4;
use std::path::Path;

const SIDE: usize = 32;
const PIXELS: usize = 3 * SIDE * SIDE;

struct RecordFormat {
    record_len: usize,
    label_offset: usize,
    num_classes: usize,
}

fn decode_records(
    bytes: &[u8],
    path: &Path,
    fmt: &RecordFormat,
    images: &mut Vec<[u8; PIXELS]>,
    labels: &mut Vec<u32>,
) -> Result<()> {
    if bytes.len() % fmt.record_len != 0 {
        return Err(Error::Data(format!(
            "{}: size {} is not a multiple of the {}-byte record length",
            path.display(),
            bytes.len(),
            fmt.record_len
        )));
    }
    for rec in bytes.chunks_exact(fmt.record_len) {
        let label = rec[fmt.label_offset] as u32;
        if label as usize >= fmt.num_classes {
            return Err(Error::Data(format!(
                "{}: label {label} out of range for {} classes",
                path.display(),
                fmt.num_classes
            )));
        }
        labels.push(label);
        let mut px = [0u8; PIXELS];
        px.copy_from_slice(&rec[fmt.label_offset + 1..]);
        images.push(px);
    }
    Ok(())
}

fn load_binary(
    root: &Path,
    files: &[&str],
    fmt: RecordFormat,
    count: Option<usize>,
) -> Result<ImageBatch> {
    let mut raw_images = Vec::new();
    let mut labels = Vec::new();
    for name in files {
        let path = root.join(name);
        if !path.exists() {
            return Err(Error::Data(format!(
                "missing CIFAR file: expected {}",
                path.display()
            )));
        }
        let bytes = std::fs::read(&path)?;
        decode_records(&bytes, &path, &fmt, &mut raw_images, &mut labels)?;
        if let Some(c) = count {
            if raw_images.len() >= c {
                break;
            }
        }
    }
    let n = count.map_or(raw_images.len(), |c| c.min(raw_images.len()));
    raw_images.truncate(n);
    labels.truncate(n);
    let mut images = Array4::<f32>::zeros((n, 3, SIDE, SIDE));
    for (i, px) in raw_images.iter().enumerate() {
        for c in 0..3 {
            for y in 0..SIDE {
                for x in 0..SIDE {
                    images[[i, c, y, x]] = px[c * SIDE * SIDE + y * SIDE + x] as f32 / 255.0;
                }
            }
        }
    }
    ImageBatch::new(images, labels, fmt.num_classes)
}

/// CIFAR-10 from `root/cifar10/`.
pub fn load_cifar10(root: &Path, split: Split, count: Option<usize>) -> Result<ImageBatch> {
    let fmt = RecordFormat {
        record_len: 1 + PIXELS,
        label_offset: 0,
        num_classes: 10,
    };
    let dir = root.join("cifar10");
    match split {
        Split::Train => load_binary(
            &dir,
            &[
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            fmt,
            count,
        ),
        Split::Test => load_binary(&dir, &["test_batch.bin"], fmt, count),
    }
}

/// CIFAR-100 (fine labels) from `root/cifar100/`.
pub fn load_cifar100(root: &Path, split: Split, count: Option<usize>) -> Result<ImageBatch> {
    let fmt = RecordFormat {
        record_len: 2 + PIXELS,
        label_offset: 1,
        num_classes: 100,
    };
    let dir = root.join("cifar100");
    let file = match split {
        Split::Train => "train.bin",
        Split::Test => "test.bin",
    };
    load_binary(&dir, &[file], fmt, count)
}
