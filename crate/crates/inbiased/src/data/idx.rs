//! IDX-format loader (the MNIST file format), with transparent gzip
//! support.
//!
//! Expected layout under the data root:
//! `mnist/train-images-idx3-ubyte[.gz]`, `mnist/train-labels-idx1-ubyte[.gz]`,
//! `mnist/t10k-images-idx3-ubyte[.gz]`, `mnist/t10k-labels-idx1-ubyte[.gz]`.

use crate::batch::ImageBatch;
use crate::data::Split;
use crate::error::{Error, Result};
use byteorder::{BigEndian, ReadBytesExt};
use flate2::read::GzDecoder;
use ndarray::{Array2, Array4};
use std::io::Read;
use std::path::{Path, PathBuf};

/// Read a file that may be gzip-compressed. The `.gz` variant is used if
/// the plain path does not exist.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let (bytes, actual) = if path.exists() {
        (std::fs::read(path)?, path.to_path_buf())
    } else {
        let gz = PathBuf::from(format!("{}.gz", path.display()));
        if !gz.exists() {
            return Err(Error::Data(format!(
                "missing IDX file: expected {} or {}",
                path.display(),
                gz.display()
            )));
        }
        (std::fs::read(&gz)?, gz)
    };
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Data(format!("corrupt gzip stream in {}: {e}", actual.display())))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn parse_idx(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let mut cur = std::io::Cursor::new(bytes);
    let magic = cur
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Data(format!("truncated IDX header in {}", path.display())))?;
    let dtype = (magic >> 8) & 0xff;
    let ndim = (magic & 0xff) as usize;
    if magic >> 16 != 0 || dtype != 0x08 || ndim == 0 || ndim > 3 {
        return Err(Error::Data(format!(
            "not an unsigned-byte IDX file: {} (magic {magic:#010x})",
            path.display()
        )));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = cur
            .read_u32::<BigEndian>()
            .map_err(|_| Error::Data(format!("truncated IDX dims in {}", path.display())))?;
        dims.push(d as usize);
    }
    let expected: usize = dims.iter().product();
    let data = &bytes[cur.position() as usize..];
    if data.len() != expected {
        return Err(Error::Data(format!(
            "IDX payload size mismatch in {}: header implies {expected} bytes, found {}",
            path.display(),
            data.len()
        )));
    }
    Ok((dims, data.to_vec()))
}

/// Load grayscale planes plus labels from an IDX image/label file pair.
pub fn load_idx_pair(
    images_path: &Path,
    labels_path: &Path,
    count: Option<usize>,
) -> Result<(Vec<Array2<f32>>, Vec<u32>)> {
    let img_bytes = read_maybe_gz(images_path)?;
    let (img_dims, img_data) = parse_idx(&img_bytes, images_path)?;
    if img_dims.len() != 3 {
        return Err(Error::Data(format!(
            "expected 3-dimensional IDX image file at {}, found {} dims",
            images_path.display(),
            img_dims.len()
        )));
    }
    let lbl_bytes = read_maybe_gz(labels_path)?;
    let (lbl_dims, lbl_data) = parse_idx(&lbl_bytes, labels_path)?;
    if lbl_dims.len() != 1 || lbl_dims[0] != img_dims[0] {
        return Err(Error::Data(format!(
            "IDX label file {} does not match image count {}",
            labels_path.display(),
            img_dims[0]
        )));
    }
    let (n_total, h, w) = (img_dims[0], img_dims[1], img_dims[2]);
    let n = count.map_or(n_total, |c| c.min(n_total));
    let mut planes = Vec::with_capacity(n);
    for i in 0..n {
        let start = i * h * w;
        let plane = Array2::from_shape_fn((h, w), |(y, x)| {
            img_data[start + y * w + x] as f32 / 255.0
        });
        planes.push(plane);
    }
    let labels = lbl_data[..n].iter().map(|&b| b as u32).collect();
    Ok((planes, labels))
}

fn mnist_paths(root: &Path, split: Split) -> (PathBuf, PathBuf) {
    let dir = root.join("mnist");
    match split {
        Split::Train => (
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        ),
        Split::Test => (
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        ),
    }
}

/// Grayscale planes and labels for a MNIST split under `root/mnist/`.
pub fn load_mnist_planes(
    root: &Path,
    split: Split,
    count: Option<usize>,
) -> Result<(Vec<Array2<f32>>, Vec<u32>)> {
    let (images, labels) = mnist_paths(root, split);
    load_idx_pair(&images, &labels, count)
}

/// MNIST as a single-channel batch.
pub fn load_mnist(root: &Path, split: Split, count: Option<usize>) -> Result<ImageBatch> {
    let (planes, labels) = load_mnist_planes(root, split, count)?;
    let n = planes.len();
    let (h, w) = if n > 0 { planes[0].dim() } else { (28, 28) };
    let mut images = Array4::<f32>::zeros((n, 1, h, w));
    for (i, p) in planes.iter().enumerate() {
        images
            .index_axis_mut(ndarray::Axis(0), i)
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(p);
    }
    ImageBatch::new(images, labels, 10)
}

#[cfg(test)]
pub(crate) fn write_idx_fixture(
    dir: &Path,
    split: Split,
    planes: &[Array2<f32>],
    labels: &[u32],
    gzip: bool,
) {
    use flate2::write::GzEncoder;
    use std::io::Write;
    let (img_path, lbl_path) = mnist_paths(dir, split);
    std::fs::create_dir_all(img_path.parent().unwrap()).unwrap();
    let (h, w) = planes[0].dim();
    let mut img = vec![0u8, 0, 8, 3];
    for d in [planes.len(), h, w] {
        img.extend((d as u32).to_be_bytes());
    }
    for p in planes {
        for v in p.iter() {
            img.push((v * 255.0).round() as u8);
        }
    }
    let mut lbl = vec![0u8, 0, 8, 1];
    lbl.extend((labels.len() as u32).to_be_bytes());
    lbl.extend(labels.iter().map(|&l| l as u8));
    for (path, bytes) in [(img_path, img), (lbl_path, lbl)] {
        if gzip {
            let f = std::fs::File::create(format!("{}.gz", path.display())).unwrap();
            let mut enc = GzEncoder::new(f, flate2::Compression::fast());
            enc.write_all(&bytes).unwrap();
            enc.finish().unwrap();
        } else {
            std::fs::write(path, bytes).unwrap();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::digit_planes;

    #[test]
    fn round_trips_raw_and_gzip() {
        let (planes, labels) = digit_planes(6, 3, "train").unwrap();
        for gzip in [false, true] {
            let dir = tempfile::tempdir().unwrap();
            write_idx_fixture(dir.path(), Split::Train, &planes, &labels, gzip);
            let batch = load_mnist(dir.path(), Split::Train, None).unwrap();
            assert_eq!(batch.len(), 6);
            assert_eq!(batch.labels, labels);
            for (i, p) in planes.iter().enumerate() {
                let loaded = batch.image(i);
                for (a, b) in p.iter().zip(loaded.iter()) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn count_truncates() {
        let (planes, labels) = digit_planes(6, 3, "train").unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_idx_fixture(dir.path(), Split::Train, &planes, &labels, false);
        let batch = load_mnist(dir.path(), Split::Train, Some(4)).unwrap();
        assert_eq!(batch.len(), 4);
    }

    #[test]
    fn missing_file_names_expected_layout() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_mnist(dir.path(), Split::Test, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("t10k-images-idx3-ubyte"), "{msg}");
    }

    #[test]
    fn corrupt_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mnist = dir.path().join("mnist");
        std::fs::create_dir_all(&mnist).unwrap();
        std::fs::write(mnist.join("train-images-idx3-ubyte"), [9u8, 9, 9, 9, 0]).unwrap();
        std::fs::write(mnist.join("train-labels-idx1-ubyte"), [0u8, 0, 8, 1, 0, 0, 0, 0]).unwrap();
        assert!(load_mnist(dir.path(), Split::Train, None).is_err());
    }
}
