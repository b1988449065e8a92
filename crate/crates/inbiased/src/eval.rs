//! Plain accuracy evaluation: overall, per-group, and on image folders.

use crate::batch::ImageBatch;
use crate::data::folder::load_folder;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::num::Scalar;
use crate::trainer::{count_correct, predict_logits};
use ndarray::Axis;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Accuracy over one group of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Evaluation summary: overall accuracy plus per-group accuracies when
/// the batch carries group tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<BTreeMap<String, GroupAccuracy>>,
}

/// Evaluate a model on a batch. Groups are reported when present; their
/// count-weighted mean accuracy equals the overall accuracy by
/// construction.
pub fn evaluate_model<F: Scalar>(
    model: &mut dyn Model<F>,
    batch: &ImageBatch,
    batch_size: usize,
) -> Result<EvalReport> {
    if batch.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let logits = predict_logits(model, &batch.images, batch_size);
    let mut per_sample = Vec::with_capacity(batch.len());
    for (row, &label) in logits.axis_iter(Axis(0)).zip(&batch.labels) {
        let mut best = 0usize;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        per_sample.push(best == label as usize);
    }
    let correct = per_sample.iter().filter(|&&c| c).count();
    debug_assert_eq!(correct, count_correct(&logits, &batch.labels));

    let groups = batch.groups.as_ref().map(|tags| {
        let mut map: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for (tag, &ok) in tags.iter().zip(&per_sample) {
            let entry = map.entry(tag.clone()).or_insert((0, 0));
            entry.1 += 1;
            if ok {
                entry.0 += 1;
            }
        }
        map.into_iter()
            .map(|(tag, (c, t))| {
                (
                    tag,
                    GroupAccuracy {
                        correct: c,
                        total: t,
                        accuracy: c as f64 / t as f64,
                    },
                )
            })
            .collect()
    });

    Ok(EvalReport {
        correct,
        total: batch.len(),
        accuracy: correct as f64 / batch.len() as f64,
        groups,
    })
}

/// Evaluate a model on a `class_<label>/image` folder tree. The folder's
/// class directories must not exceed the model's class count.
pub fn folder_eval<F: Scalar>(
    model: &mut dyn Model<F>,
    root: &Path,
    batch_size: usize,
) -> Result<EvalReport> {
    let batch = load_folder(root, None)?;
    if batch.num_classes > model.num_classes() {
        return Err(Error::Config(format!(
            "folder {} has {} classes but the model predicts {}",
            root.display(),
            batch.num_classes,
            model.num_classes()
        )));
    }
    evaluate_model(model, &batch, batch_size)
}

/// [`folder_eval`] for a model restored from a checkpoint: every class
/// subfolder must appear in the checkpoint's label map, so images can
/// never be scored against the wrong class index.
pub fn folder_eval_with_labels<F: Scalar>(
    model: &mut dyn Model<F>,
    label_map: &[String],
    root: &Path,
    batch_size: usize,
) -> Result<EvalReport> {
    let mut dirs: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            dirs.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    dirs.sort();
    for name in &dirs {
        if !label_map.iter().any(|l| l == name) {
            return Err(Error::Data(format!(
                "class folder `{name}` in {} is not in the checkpoint's label map {:?}",
                root.display(),
                label_map
            )));
        }
    }
    folder_eval(model, root, batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Augmentation;
    use crate::config::TrainConfig;
    use crate::data::{self, DatasetName, DatasetSpec, Split};
    use crate::models::Arch;
    use crate::trainer::train_baseline;
    use ndarray::{Array2, Array4};

    struct FixedModel {
        logits: Array2<f32>,
        classes: usize,
    }

    impl Model<f32> for FixedModel {
        fn forward_split(
            &mut self,
            x: &ndarray::ArrayView4<'_, f32>,
            _train: bool,
        ) -> (Array2<f32>, Array2<f32>) {
            let n = x.shape()[0];
            let z = Array2::zeros((n, 1));
            (z, self.logits.slice(ndarray::s![..n, ..]).to_owned())
        }
        fn backward(
            &mut self,
            _d_logits: &ndarray::ArrayView2<'_, f32>,
            _d_z: Option<&ndarray::ArrayView2<'_, f32>>,
        ) -> Array4<f32> {
            unimplemented!("evaluation only")
        }
        fn params_mut(&mut self) -> Vec<&mut crate::nn::Param<f32>> {
            Vec::new()
        }
        fn running_stats_mut(&mut self) -> Vec<(String, &mut ndarray::Array1<f64>)> {
            Vec::new()
        }
        fn latent_dim(&self) -> usize {
            1
        }
        fn num_classes(&self) -> usize {
            self.classes
        }
        fn arch(&self) -> Arch {
            Arch::Mlp
        }
        fn zero_grad(&mut self) {}
        fn param_count(&mut self) -> usize {
            0
        }
    }

    fn batch_with_groups() -> ImageBatch {
        let images = Array4::from_elem((4, 1, 4, 4), 0.5f32);
        ImageBatch::new(images, vec![0, 1, 0, 1], 2)
            .unwrap()
            .with_groups(vec!["a".into(), "a".into(), "b".into(), "b".into()])
            .unwrap()
    }

    #[test]
    fn perfect_predictor_scores_one_everywhere() {
        let batch = batch_with_groups();
        let mut logits = Array2::zeros((4, 2));
        for (i, &y) in batch.labels.iter().enumerate() {
            logits[[i, y as usize]] = 5.0;
        }
        let mut model = FixedModel { logits, classes: 2 };
        let report = evaluate_model(&mut model, &batch, 8).unwrap();
        assert_eq!(report.accuracy, 1.0);
        for g in report.groups.unwrap().values() {
            assert_eq!(g.accuracy, 1.0);
        }
    }

    #[test]
    fn group_weighted_mean_equals_overall() {
        let batch = batch_with_groups();
        // Predict class 0 always: half right overall, but unevenly by
        // group (a: 1/2, b: 1/2 here; the identity must hold anyway).
        let mut logits = Array2::zeros((4, 2));
        for i in 0..4 {
            logits[[i, 0]] = 5.0;
        }
        let mut model = FixedModel { logits, classes: 2 };
        let report = evaluate_model(&mut model, &batch, 8).unwrap();
        let groups = report.groups.as_ref().unwrap();
        let weighted: f64 = groups
            .values()
            .map(|g| g.accuracy * g.total as f64 / report.total as f64)
            .sum();
        assert!((weighted - report.accuracy).abs() <= 1e-9);
        let counted: usize = groups.values().map(|g| g.total).sum();
        assert_eq!(counted, report.total);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let empty = ImageBatch::new(Array4::zeros((0, 1, 4, 4)), vec![], 2).unwrap();
        let mut model = FixedModel {
            logits: Array2::zeros((0, 2)),
            classes: 2,
        };
        assert!(evaluate_model(&mut model, &empty, 8).is_err());
    }

    #[test]
    fn folder_eval_matches_in_memory_evaluation() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::new(DatasetName::ColoredDigitsFg, Split::Test, 5).with_count(20);
        let batch = data::load_rgb(&spec).unwrap();
        crate::data::manifest::write_dataset(&batch, dir.path(), &spec, None).unwrap();

        let train = DatasetSpec::new(DatasetName::ColoredDigitsFg, Split::Train, 5).with_count(32);
        let mut cfg = TrainConfig::recommended(train, Arch::Mlp, 1);
        cfg.augmentation = Augmentation::None;
        cfg.batch_size = 16;
        let mut out = train_baseline::<f32>(false, &cfg).unwrap();

        let from_memory = evaluate_model(out.primary.as_mut(), &batch, 16).unwrap();
        let from_folder = folder_eval(out.primary.as_mut(), dir.path(), 16).unwrap();
        assert_eq!(from_memory.accuracy, from_folder.accuracy);
        assert_eq!(from_memory.correct, from_folder.correct);
    }

    #[test]
    fn folder_with_too_many_classes_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for c in 0..3 {
            let sub = dir.path().join(format!("class_{c}"));
            std::fs::create_dir_all(&sub).unwrap();
            crate::data::folder::write_png(&sub.join("0.png"), 4, 4, |_, _| [90, 90, 90]);
        }
        let mut model = FixedModel {
            logits: Array2::zeros((3, 2)),
            classes: 2,
        };
        assert!(folder_eval(&mut model, dir.path(), 8).is_err());
    }

    #[test]
    fn empty_folder_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = FixedModel {
            logits: Array2::zeros((1, 2)),
            classes: 2,
        };
        assert!(folder_eval(&mut model, dir.path(), 8).is_err());
    }

    #[test]
    fn folders_outside_the_label_map_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["class_0", "class_1", "mystery"] {
            let sub = dir.path().join(name);
            std::fs::create_dir_all(&sub).unwrap();
            crate::data::folder::write_png(&sub.join("0.png"), 4, 4, |_, _| [20, 200, 20]);
        }
        let mut model = FixedModel {
            logits: Array2::zeros((3, 3)),
            classes: 3,
        };
        let labels: Vec<String> = (0..3).map(|k| format!("class_{k}")).collect();
        let err = folder_eval_with_labels(&mut model, &labels, dir.path(), 8)
            .err()
            .expect("must be rejected");
        assert!(err.to_string().contains("mystery"), "got {err}");

        // Remove the stray folder: the same call now succeeds.
        std::fs::remove_dir_all(dir.path().join("mystery")).unwrap();
        let report = folder_eval_with_labels(&mut model, &labels, dir.path(), 8).unwrap();
        assert_eq!(report.total, 2);
    }
}
