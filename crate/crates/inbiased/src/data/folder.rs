//! Folder ingestion: one subdirectory per class, holding PNG or JPEG
//! images.
//!
//! When every subdirectory is named `class_<k>` (the layout the dataset
//! exporter writes), `k` is used as the label directly, so a re-loaded
//! export keeps its labels even if some classes have no samples.
//! Otherwise class indices follow the lexicographic order of the
//! subdirectory names. Files are read in lexicographic order within
//! each class, so the sample stream is deterministic.

use crate::batch::ImageBatch;
use crate::error::{Error, Result};
use ndarray::Array4;
use std::path::{Path, PathBuf};

const EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Sorted class subdirectories of `root`.
pub fn class_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !root.is_dir() {
        return Err(Error::Data(format!(
            "missing folder dataset: expected a directory of class subfolders at {}",
            root.display()
        )));
    }
    let mut dirs: Vec<(String, PathBuf)> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Data(format!(
            "no class subdirectories found under {}",
            root.display()
        )));
    }
    Ok(dirs)
}

/// Decode one image file to RGB pixels in `[0, 1]`.
pub fn decode_image(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut chw = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            chw[c * h * w + y as usize * w + x as usize] = px.0[c] as f32 / 255.0;
        }
    }
    Ok((h, w, chw))
}

/// Label for each class directory: the number from `class_<k>` naming
/// when every directory follows it, else the lexicographic index.
fn dir_labels(dirs: &[(String, PathBuf)]) -> Vec<u32> {
    let numeric: Option<Vec<u32>> = dirs
        .iter()
        .map(|(name, _)| name.strip_prefix("class_")?.parse().ok())
        .collect();
    numeric.unwrap_or_else(|| (0..dirs.len() as u32).collect())
}

/// Load a class-per-subdirectory image dataset rooted at `root`.
pub fn load_folder(root: &Path, count: Option<usize>) -> Result<ImageBatch> {
    let dirs = class_dirs(root)?;
    let labels_by_dir = dir_labels(&dirs);
    let mut files: Vec<(PathBuf, u32)> = Vec::new();
    for (class_idx, (_, dir)) in dirs.iter().enumerate() {
        let mut names: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        names.sort();
        files.extend(names.into_iter().map(|p| (p, labels_by_dir[class_idx])));
    }
    if let Some(c) = count {
        files.truncate(c);
    }
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no image files found under {}",
            root.display()
        )));
    }
    let (h0, w0, first) = decode_image(&files[0].0)?;
    let n = files.len();
    let mut images = Array4::<f32>::zeros((n, 3, h0, w0));
    images
        .index_axis_mut(ndarray::Axis(0), 0)
        .assign(&ndarray::Array3::from_shape_vec((3, h0, w0), first).expect("shape"));
    let mut labels = vec![files[0].1];
    for (i, (path, label)) in files.iter().enumerate().skip(1) {
        let (h, w, chw) = decode_image(path)?;
        if (h, w) != (h0, w0) {
            return Err(Error::Data(format!(
                "{}: image size {w}x{h} differs from first image {w0}x{h0}",
                path.display()
            )));
        }
        images
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&ndarray::Array3::from_shape_vec((3, h, w), chw).expect("shape"));
        labels.push(*label);
    }
    let num_classes = labels_by_dir
        .iter()
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0)
        .max(2);
    ImageBatch::new(images, labels, num_classes)
}

#[cfg(test)]
pub(crate) fn write_png(path: &Path, h: usize, w: usize, rgb: impl Fn(usize, usize) -> [u8; 3]) {
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(x as u32, y as u32, image::Rgb(rgb(y, x)));
        }
    }
    buf.save(path).unwrap();
}
