//! Skewed CelebA ingestion: gender classification with hair color
//! confounded in training.
//!
//! Expected layout under the data root: `celeba/list_attr_celeba.txt`
//! (the standard attribute file: count line, header line with attribute
//! names including `Blond_Hair` and `Male`, then one row per image of
//! filename and +/-1 flags) and `celeba/img_align_celeba/<filename>`.
//! An optional `celeba/list_eval_partition.txt` assigns the official
//! train (0) and test (2) partitions; without it, every fifth sample is
//! held out for test.
//!
//! The train split keeps only blond females and non-blond males, so hair
//! color fully predicts the gender label. The test split keeps all four
//! combinations, each tagged `B-F`, `NB-M`, `B-M`, or `NB-F` for
//! per-group accuracy reporting.

use crate::batch::ImageBatch;
use crate::data::folder::decode_image;
use crate::data::Split;
use crate::error::{Error, Result};
use ndarray::Array4;
use std::collections::HashMap;
use std::path::Path;

struct AttrRow {
    file: String,
    blond: bool,
    male: bool,
}

fn parse_attrs(path: &Path) -> Result<Vec<AttrRow>> {
    let text = std::fs::read_to_string(path).map_err(|_| {
        Error::Data(format!(
            "missing CelebA attribute file: expected {}",
            path.display()
        ))
    })?;
    let mut lines = text.lines();
    let _count = lines.next();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: missing attribute header", path.display())))?;
    let names: Vec<&str> = header.split_whitespace().collect();
    let blond_col = names.iter().position(|&n| n == "Blond_Hair");
    let male_col = names.iter().position(|&n| n == "Male");
    let (blond_col, male_col) = match (blond_col, male_col) {
        (Some(b), Some(m)) => (b, m),
        _ => {
            return Err(Error::Data(format!(
                "{}: attribute header must contain Blond_Hair and Male",
                path.display()
            )))
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        let mut it = line.split_whitespace();
        let file = match it.next() {
            Some(f) => f.to_string(),
            None => continue,
        };
        let flags: Vec<&str> = it.collect();
        if flags.len() != names.len() {
            return Err(Error::Data(format!(
                "{}: row for {file} has {} flags, header lists {} attributes",
                path.display(),
                flags.len(),
                names.len()
            )));
        }
        rows.push(AttrRow {
            file,
            blond: flags[blond_col] == "1",
            male: flags[male_col] == "1",
        });
    }
    Ok(rows)
}

fn partition_map(path: &Path) -> Option<HashMap<String, u8>> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut map = HashMap::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        if let (Some(file), Some(part)) = (it.next(), it.next()) {
            if let Ok(p) = part.parse::<u8>() {
                map.insert(file.to_string(), p);
            }
        }
    }
    Some(map)
}

fn group_tag(blond: bool, male: bool) -> &'static str {
    match (blond, male) {
        (true, false) => "B-F",
        (false, true) => "NB-M",
        (true, true) => "B-M",
        (false, false) => "NB-F",
    }
}

/// Load the skewed CelebA split. Label 0 = female, 1 = male.
pub fn load_skewed_celeba(root: &Path, split: Split, count: Option<usize>) -> Result<ImageBatch> {
    let dir = root.join("celeba");
    let rows = parse_attrs(&dir.join("list_attr_celeba.txt"))?;
    let partitions = partition_map(&dir.join("list_eval_partition.txt"));
    let mut selected: Vec<&AttrRow> = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let in_split = match &partitions {
            Some(map) => match map.get(&row.file) {
                Some(0) => split == Split::Train,
                Some(_) => split == Split::Test,
                None => false,
            },
            None => match split {
                Split::Train => i % 5 != 4,
                Split::Test => i % 5 == 4,
            },
        };
        if !in_split {
            continue;
        }
        let keep = match split {
            // blond females and non-blond males only
            Split::Train => row.blond != row.male,
            Split::Test => true,
        };
        if keep {
            selected.push(row);
        }
    }
    if let Some(c) = count {
        selected.truncate(c);
    }
    if selected.is_empty() {
        return Err(Error::Data(format!(
            "no CelebA samples selected for {} split under {}",
            split.as_str(),
            dir.display()
        )));
    }
    let img_dir = dir.join("img_align_celeba");
    let (h0, w0, first) = decode_image(&img_dir.join(&selected[0].file))?;
    let n = selected.len();
    let mut images = Array4::<f32>::zeros((n, 3, h0, w0));
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    images
        .index_axis_mut(ndarray::Axis(0), 0)
        .assign(&ndarray::Array3::from_shape_vec((3, h0, w0), first).expect("shape"));
    for (i, row) in selected.iter().enumerate() {
        if i > 0 {
            let (h, w, chw) = decode_image(&img_dir.join(&row.file))?;
            if (h, w) != (h0, w0) {
                return Err(Error::Data(format!(
                    "{}: image size {w}x{h} differs from first image {w0}x{h0}",
                    row.file
                )));
            }
            images
                .index_axis_mut(ndarray::Axis(0), i)
                .assign(&ndarray::Array3::from_shape_vec((3, h, w), chw).expect("shape"));
        }
        labels.push(row.male as u32);
        groups.push(group_tag(row.blond, row.male).to_string());
    }
    ImageBatch::new(images, labels, 2)?.with_groups(groups)
}
