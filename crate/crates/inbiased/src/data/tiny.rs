//! TinyImageNet directory-layout loader.
//!
//! Expected layout under the data root: `tinyimagenet/wnids.txt` (one
//! class id per line, fixing class order), `tinyimagenet/train/<wnid>/
//! images/*.JPEG`, and `tinyimagenet/val/images/*.JPEG` with
//! `tinyimagenet/val/val_annotations.txt` mapping file names to class
//! ids. If `wnids.txt` is absent, classes are the sorted training
//! subdirectories.

use crate::batch::ImageBatch;
use crate::data::folder::decode_image;
use crate::data::Split;
use crate::error::{Error, Result};
use ndarray::Array4;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

fn class_order(dir: &Path) -> Result<Vec<String>> {
    let wnids_file = dir.join("wnids.txt");
    if wnids_file.exists() {
        let text = std::fs::read_to_string(&wnids_file)?;
        let ids: Vec<String> = text
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        if ids.is_empty() {
            return Err(Error::Data(format!("{}: no class ids", wnids_file.display())));
        }
        return Ok(ids);
    }
    let train = dir.join("train");
    if !train.is_dir() {
        return Err(Error::Data(format!(
            "missing TinyImageNet layout: expected {} or {}",
            wnids_file.display(),
            train.display()
        )));
    }
    let mut ids: Vec<String> = std::fs::read_dir(&train)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    ids.sort();
    Ok(ids)
}

fn collect_train(dir: &Path, classes: &HashMap<String, u32>) -> Result<Vec<(PathBuf, u32)>> {
    let mut files = Vec::new();
    let mut ordered: Vec<(&String, &u32)> = classes.iter().collect();
    ordered.sort_by_key(|(_, &idx)| idx);
    for (wnid, &idx) in ordered {
        let img_dir = dir.join("train").join(wnid).join("images");
        if !img_dir.is_dir() {
            return Err(Error::Data(format!(
                "missing TinyImageNet class directory: expected {}",
                img_dir.display()
            )));
        }
        let mut names: Vec<PathBuf> = std::fs::read_dir(&img_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        files.extend(names.into_iter().map(|p| (p, idx)));
    }
    Ok(files)
}

fn collect_val(dir: &Path, classes: &HashMap<String, u32>) -> Result<Vec<(PathBuf, u32)>> {
    let ann = dir.join("val").join("val_annotations.txt");
    let text = std::fs::read_to_string(&ann).map_err(|_| {
        Error::Data(format!(
            "missing TinyImageNet annotations: expected {}",
            ann.display()
        ))
    })?;
    let img_dir = dir.join("val").join("images");
    let mut files = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        let (file, wnid) = match (it.next(), it.next()) {
            (Some(f), Some(w)) => (f, w),
            _ => continue,
        };
        let idx = *classes.get(wnid).ok_or_else(|| {
            Error::Data(format!("{}: unknown class id {wnid}", ann.display()))
        })?;
        files.push((img_dir.join(file), idx));
    }
    Ok(files)
}

/// TinyImageNet from `root/tinyimagenet/`. The test split is the official
/// validation set (the official test set is unlabeled).
pub fn load_tinyimagenet(root: &Path, split: Split, count: Option<usize>) -> Result<ImageBatch> {
    let dir = root.join("tinyimagenet");
    let order = class_order(&dir)?;
    let classes: HashMap<String, u32> = order
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i as u32))
        .collect();
    let mut files = match split {
        Split::Train => collect_train(&dir, &classes)?,
        Split::Test => collect_val(&dir, &classes)?,
    };
    if let Some(c) = count {
        files.truncate(c);
    }
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no TinyImageNet samples for {} split under {}",
            split.as_str(),
            dir.display()
        )));
    }
    let (h0, w0, first) = decode_image(&files[0].0)?;
    let n = files.len();
    let mut images = Array4::<f32>::zeros((n, 3, h0, w0));
    let mut labels = Vec::with_capacity(n);
    images
        .index_axis_mut(ndarray::Axis(0), 0)
        .assign(&ndarray::Array3::from_shape_vec((3, h0, w0), first).expect("shape"));
    labels.push(files[0].1);
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
    ImageBatch::new(images, labels, classes.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::folder::write_png;

    fn build_fixture(root: &Path) {
        let dir = root.join("tinyimagenet");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("wnids.txt"), "n0002\nn0001\n").unwrap();
        for wnid in ["n0001", "n0002"] {
            let d = dir.join("train").join(wnid).join("images");
            std::fs::create_dir_all(&d).unwrap();
            for i in 0..2 {
                write_png(&d.join(format!("{wnid}_{i}.JPEG")), 8, 8, |_, _| [1, 2, 3]);
            }
        }
        let val = dir.join("val").join("images");
        std::fs::create_dir_all(&val).unwrap();
        write_png(&val.join("val_0.JPEG"), 8, 8, |_, _| [4, 5, 6]);
        write_png(&val.join("val_1.JPEG"), 8, 8, |_, _| [7, 8, 9]);
        std::fs::write(
            dir.join("val").join("val_annotations.txt"),
            "val_0.JPEG n0001 0 0 8 8\nval_1.JPEG n0002 0 0 8 8\n",
        )
        .unwrap();
    }

    #[test]
    fn wnids_file_fixes_class_order() {
        let dir = tempfile::tempdir().unwrap();
        build_fixture(dir.path());
        let batch = load_tinyimagenet(dir.path(), Split::Train, None).unwrap();
        // wnids.txt lists n0002 first, so it gets class index 0
        assert_eq!(batch.labels, vec![0, 0, 1, 1]);
        assert_eq!(batch.num_classes, 2);
    }

    #[test]
    fn val_annotations_assign_labels() {
        let dir = tempfile::tempdir().unwrap();
        build_fixture(dir.path());
        let batch = load_tinyimagenet(dir.path(), Split::Test, None).unwrap();
        assert_eq!(batch.labels, vec![1, 0]);
    }

    #[test]
    fn missing_layout_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_tinyimagenet(dir.path(), Split::Train, None).unwrap_err();
        assert!(err.to_string().contains("tinyimagenet"));
    }
}
