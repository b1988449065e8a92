//! Training loops: paired co-training, single-network baselines,
//! self-distillation, and softmax-mean ensembling.
//!
//! All randomness comes from named sub-streams of the run seed (model
//! init, per-epoch shuffles, per-batch augmentation draws), so a run is
//! reproducible bit for bit, and a paired run with all-zero alignment
//! weights updates its RGB network through exactly the same float
//! operations as the plain RGB baseline.

use crate::augment::{augment, Augmentation};
use crate::batch::ImageBatch;
use crate::checkpoint::{CheckpointKind, CheckpointMeta, TrainState};
use crate::config::TrainConfig;
use crate::data;
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy_grad, inbiased_losses_grad, softmax, LossTerms,
};
use crate::models::{build_model, Model};
use crate::nn::Sgd;
use crate::num::{self, Scalar};
use crate::record::{config_hash, EpochMetrics, RunRecord};
use crate::rng::{permutation, stream};
use crate::shape::{extract_shape, ShapeExtractorConfig};
use ndarray::{Array2, Array4, Axis};

/// The four training modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Two networks: RGB and shape, coupled by alignment losses.
    Inbiased,
    /// One network on raw RGB images, cross-entropy only.
    BaselineRgb,
    /// One network on shape-extracted images, cross-entropy only.
    BaselineShape,
    /// Two RGB networks coupled by alignment losses; the peer is
    /// discarded at inference.
    SelfDistil,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Inbiased => "inbiased",
            TrainMode::BaselineRgb => "baseline_rgb",
            TrainMode::BaselineShape => "baseline_shape",
            TrainMode::SelfDistil => "selfdistil",
        }
    }

    fn has_peer(&self) -> bool {
        matches!(self, TrainMode::Inbiased | TrainMode::SelfDistil)
    }
}

/// A finished training run: the inference network, the auxiliary network
/// for two-network modes, the per-epoch record, and a description of
/// each network's input pipeline for introspection.
pub struct TrainOutput<F: Scalar> {
    pub primary: Box<dyn Model<F>>,
    pub peer: Option<Box<dyn Model<F>>>,
    pub record: RunRecord,
    pub primary_pipeline: Vec<&'static str>,
    pub peer_pipeline: Option<Vec<&'static str>>,
}

impl<F: Scalar> TrainOutput<F> {
    /// True if the given pipeline routes images through the shape
    /// extractor.
    pub fn pipeline_uses_extractor(pipeline: &[&str]) -> bool {
        pipeline.contains(&"extract_shape")
    }
}

/// Live view of a run handed to the after-epoch hook: enough to write a
/// full checkpoint without copying any tensors.
pub struct EpochSnapshot<'a, F: Scalar> {
    /// Header describing the run at this point; `epoch` counts completed
    /// epochs and `history` holds their metric rows.
    pub meta: CheckpointMeta,
    /// True on the last epoch of the configured run.
    pub is_final: bool,
    pub primary: &'a mut (dyn Model<F> + 'static),
    pub peer: Option<&'a mut (dyn Model<F> + 'static)>,
    pub opt_primary: &'a Sgd<F>,
    pub opt_peer: &'a Sgd<F>,
}

/// Callback invoked after every completed epoch. Returning an error aborts
/// the run (training already performed is preserved in any checkpoints the
/// hook wrote).
pub type EpochHook<'a, F> = Box<dyn FnMut(&mut EpochSnapshot<'_, F>) -> Result<()> + 'a>;

/// Optional training extensions: resume from a loaded checkpoint and/or
/// observe the run after each epoch.
pub struct TrainHooks<'a, F: Scalar> {
    /// Restored state from [`crate::checkpoint::load_train_state`]; the run
    /// continues at its recorded epoch. Because every random draw comes
    /// from per-epoch named streams, a resumed run reproduces the
    /// uninterrupted run bit for bit.
    pub resume: Option<TrainState<F>>,
    pub after_epoch: Option<EpochHook<'a, F>>,
}

impl<F: Scalar> Default for TrainHooks<'_, F> {
    fn default() -> Self {
        Self {
            resume: None,
            after_epoch: None,
        }
    }
}

/// Convert an `f32` pixel array to the model scalar type.
pub fn to_scalar<F: Scalar>(x: &Array4<f32>) -> Array4<F> {
    x.mapv(|v| num::cast(v as f64))
}

pub(crate) fn count_correct<F: Scalar>(logits: &Array2<F>, labels: &[u32]) -> usize {
    logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0usize;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best == label as usize
        })
        .count()
}

pub(crate) struct EpochAccumulator {
    pub(crate) total: f64,
    pub(crate) ce: f64,
    pub(crate) da: f64,
    pub(crate) fa: f64,
    pub(crate) correct: usize,
    pub(crate) count: usize,
}

impl EpochAccumulator {
    pub(crate) fn new() -> Self {
        Self {
            total: 0.0,
            ce: 0.0,
            da: 0.0,
            fa: 0.0,
            correct: 0,
            count: 0,
        }
    }

    pub(crate) fn add<F: Scalar>(&mut self, terms: &LossTerms<F>, correct: usize, batch: usize) {
        let w = batch as f64;
        self.total += terms.total.to_f64().unwrap_or(f64::NAN) * w;
        self.ce += terms.ce.to_f64().unwrap_or(f64::NAN) * w;
        self.da += terms.da.to_f64().unwrap_or(f64::NAN) * w;
        self.fa += terms.fa.to_f64().unwrap_or(f64::NAN) * w;
        self.correct += correct;
        self.count += batch;
    }

    pub(crate) fn mean(&self, f: f64) -> f64 {
        f / self.count.max(1) as f64
    }
}

/// Train according to `cfg` and `mode`, loading the dataset named in the
/// config.
pub fn train<F: Scalar>(mode: TrainMode, cfg: &TrainConfig) -> Result<TrainOutput<F>> {
    let batch = data::load_rgb(&cfg.dataset)?;
    train_with_data(mode, cfg, &batch)
}

/// Paired co-training (shape network fed extractor outputs).
pub fn train_inbiased<F: Scalar>(cfg: &TrainConfig) -> Result<TrainOutput<F>> {
    train(TrainMode::Inbiased, cfg)
}

/// Single-network baseline on raw RGB or on extractor outputs.
pub fn train_baseline<F: Scalar>(shape_modality: bool, cfg: &TrainConfig) -> Result<TrainOutput<F>> {
    train(
        if shape_modality {
            TrainMode::BaselineShape
        } else {
            TrainMode::BaselineRgb
        },
        cfg,
    )
}

/// Paired co-training where both networks see RGB images.
pub fn train_selfdistil<F: Scalar>(cfg: &TrainConfig) -> Result<TrainOutput<F>> {
    train(TrainMode::SelfDistil, cfg)
}

/// Train on an already-loaded batch (used by tests and by callers that
/// reuse one dataset across runs).
pub fn train_with_data<F: Scalar>(
    mode: TrainMode,
    cfg: &TrainConfig,
    train_data: &ImageBatch,
) -> Result<TrainOutput<F>> {
    train_with_data_hooked(mode, cfg, train_data, TrainHooks::default())
}

/// [`train_with_data`] with resume support and an after-epoch callback.
pub fn train_with_data_hooked<F: Scalar>(
    mode: TrainMode,
    cfg: &TrainConfig,
    train_data: &ImageBatch,
    mut hooks: TrainHooks<'_, F>,
) -> Result<TrainOutput<F>> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    train_data.ensure_finite("training data")?;
    let num_classes = train_data.num_classes;
    let seed = cfg.seed;
    let extractor = ShapeExtractorConfig::default();

    // Input streams. The extractor is deterministic, so running it once
    // up front equals running it per batch.
    let extracted_primary;
    let (primary_images, mut primary_pipeline): (&Array4<f32>, Vec<&'static str>) = match mode {
        TrainMode::BaselineShape => {
            extracted_primary = extract_shape(train_data, &extractor)?;
            (&extracted_primary.images, vec!["load", "extract_shape"])
        }
        _ => (&train_data.images, vec!["load"]),
    };
    let peer_store;
    let (peer_images, mut peer_pipeline): (Option<&Array4<f32>>, Option<Vec<&'static str>>) =
        match mode {
            TrainMode::Inbiased => {
                peer_store = extract_shape(train_data, &extractor)?;
                (
                    Some(&peer_store.images),
                    Some(vec!["load", "extract_shape"]),
                )
            }
            TrainMode::SelfDistil => (Some(&train_data.images), Some(vec!["load"])),
            _ => (None, None),
        };
    if cfg.augmentation == Augmentation::CropFlip {
        primary_pipeline.push("augment");
        if let Some(p) = peer_pipeline.as_mut() {
            p.push("augment");
        }
    }

    let primary_shape = {
        let s = primary_images.shape();
        (s[1], s[2], s[3])
    };
    let peer_shape: Option<(usize, usize, usize)> = peer_images.map(|imgs| {
        let s = imgs.shape();
        (s[1], s[2], s[3])
    });

    let hash = config_hash(cfg)?;
    let meta_template = CheckpointMeta {
        kind: CheckpointKind::Full,
        mode: mode.as_str().to_string(),
        config_hash: hash.clone(),
        epoch: 0,
        total_epochs: cfg.epochs,
        dataset: cfg.dataset.name.to_string(),
        arch: cfg.arch.to_string(),
        seed,
        num_classes,
        input_shape: primary_shape,
        peer_input_shape: peer_shape,
        label_map: (0..num_classes).map(|k| format!("class_{k}")).collect(),
        scalar_width: std::mem::size_of::<F>(),
        history: Vec::new(),
    };

    let mut opt_primary = Sgd::<F>::new(cfg.momentum, cfg.weight_decay);
    let mut opt_peer = Sgd::<F>::new(cfg.momentum, cfg.weight_decay);
    let mut record = RunRecord::new(
        mode.as_str(),
        hash,
        cfg.dataset.name.to_string(),
        cfg.arch.to_string(),
        seed,
    );

    let mut start_epoch = 0;
    let (mut primary, mut peer): (Box<dyn Model<F>>, Option<Box<dyn Model<F>>>) =
        match hooks.resume.take() {
            Some(state) => {
                check_resume_meta(&state.meta, &meta_template)?;
                opt_primary.set_buffers(state.opt_primary);
                opt_peer.set_buffers(state.opt_peer);
                start_epoch = state.meta.epoch;
                record.epochs = state.meta.history;
                (state.primary, state.peer)
            }
            None => {
                let primary = build_model::<F>(
                    cfg.arch,
                    num_classes,
                    primary_shape,
                    &mut stream(seed, init_label(mode, false)),
                )?;
                let peer = match peer_shape {
                    Some(shape) => Some(build_model::<F>(
                        cfg.arch,
                        num_classes,
                        shape,
                        &mut stream(seed, init_label(mode, true)),
                    )?),
                    None => None,
                };
                (primary, peer)
            }
        };

    let scheduler = cfg.scheduler.build(cfg.epochs);
    let started = std::time::Instant::now();

    let n = train_data.len();
    for epoch in start_epoch..cfg.epochs {
        let lr = scheduler.lr(cfg.lr, epoch);
        let order = permutation(seed, &format!("shuffle/{epoch}"), n);
        let mut acc_primary = EpochAccumulator::new();
        let mut acc_peer = EpochAccumulator::new();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let labels: Vec<u32> = chunk.iter().map(|&i| train_data.labels[i]).collect();
            let x_primary = gather(primary_images, chunk);
            let x_primary = augment(
                &x_primary,
                cfg.augmentation,
                seed,
                &format!("{}/{epoch}/{b}", aug_label(mode, false)),
            );
            let xp = to_scalar::<F>(&x_primary);
            let (z_p, logits_p) = primary.forward_split(&xp.view(), true);

            match (&mut peer, peer_images) {
                (Some(peer_model), Some(peer_src)) => {
                    let x_peer = gather(peer_src, chunk);
                    let x_peer = augment(
                        &x_peer,
                        cfg.augmentation,
                        seed,
                        &format!("{}/{epoch}/{b}", aug_label(mode, true)),
                    );
                    let xq = to_scalar::<F>(&x_peer);
                    let (z_q, logits_q) = peer_model.forward_split(&xq.view(), true);
                    let (losses, grads) = inbiased_losses_grad(
                        &logits_p.view(),
                        &z_p.view(),
                        &logits_q.view(),
                        &z_q.view(),
                        &labels,
                        &cfg.weights,
                    )?;
                    guard_finite(losses.rgb.total, mode, epoch, b, "primary")?;
                    guard_finite(losses.shape.total, mode, epoch, b, "peer")?;
                    primary.zero_grad();
                    primary.backward(&grads.d_rgb_logits.view(), Some(&grads.d_rgb_z.view()));
                    opt_primary.step(lr, &mut primary.params_mut());
                    peer_model.zero_grad();
                    peer_model.backward(&grads.d_shape_logits.view(), Some(&grads.d_shape_z.view()));
                    opt_peer.step(lr, &mut peer_model.params_mut());
                    acc_primary.add(&losses.rgb, count_correct(&logits_p, &labels), labels.len());
                    acc_peer.add(&losses.shape, count_correct(&logits_q, &labels), labels.len());
                }
                _ => {
                    let (ce, d_logits) = cross_entropy_grad(&logits_p.view(), &labels)?;
                    let terms = LossTerms {
                        total: ce,
                        ce,
                        da: F::zero(),
                        fa: F::zero(),
                    };
                    guard_finite(ce, mode, epoch, b, "primary")?;
                    primary.zero_grad();
                    primary.backward(&d_logits.view(), None);
                    opt_primary.step(lr, &mut primary.params_mut());
                    acc_primary.add(&terms, count_correct(&logits_p, &labels), labels.len());
                }
            }
        }
        let mut metrics = EpochMetrics {
            epoch,
            lr,
            loss: acc_primary.mean(acc_primary.total),
            ce: acc_primary.mean(acc_primary.ce),
            da: acc_primary.mean(acc_primary.da),
            fa: acc_primary.mean(acc_primary.fa),
            train_acc: acc_primary.correct as f64 / acc_primary.count.max(1) as f64,
            peer_loss: None,
            peer_ce: None,
            peer_da: None,
            peer_fa: None,
            peer_train_acc: None,
        };
        if mode.has_peer() {
            metrics.peer_loss = Some(acc_peer.mean(acc_peer.total));
            metrics.peer_ce = Some(acc_peer.mean(acc_peer.ce));
            metrics.peer_da = Some(acc_peer.mean(acc_peer.da));
            metrics.peer_fa = Some(acc_peer.mean(acc_peer.fa));
            metrics.peer_train_acc =
                Some(acc_peer.correct as f64 / acc_peer.count.max(1) as f64);
        }
        record.epochs.push(metrics);

        if let Some(hook) = hooks.after_epoch.as_mut() {
            let mut meta = meta_template.clone();
            meta.epoch = epoch + 1;
            meta.history = record.epochs.clone();
            let mut snapshot = EpochSnapshot {
                meta,
                is_final: epoch + 1 == cfg.epochs,
                primary: primary.as_mut(),
                peer: peer.as_deref_mut(),
                opt_primary: &opt_primary,
                opt_peer: &opt_peer,
            };
            hook(&mut snapshot)?;
        }
    }
    record.wall_seconds = started.elapsed().as_secs_f64();

    Ok(TrainOutput {
        primary,
        peer,
        record,
        primary_pipeline,
        peer_pipeline,
    })
}

/// A checkpoint may only resume the run that wrote it: same resolved
/// config (via its hash), same mode, and data that still has the same
/// geometry. Each mismatch is reported by name.
pub(crate) fn check_resume_meta(saved: &CheckpointMeta, expected: &CheckpointMeta) -> Result<()> {
    let mismatch = |field: &str, saved: &dyn std::fmt::Display, want: &dyn std::fmt::Display| {
        Err(Error::Config(format!(
            "cannot resume: checkpoint {field} is {saved}, this run expects {want}"
        )))
    };
    if saved.config_hash != expected.config_hash {
        return mismatch("config_hash", &saved.config_hash, &expected.config_hash);
    }
    if saved.mode != expected.mode {
        return mismatch("mode", &saved.mode, &expected.mode);
    }
    if saved.num_classes != expected.num_classes {
        return mismatch("num_classes", &saved.num_classes, &expected.num_classes);
    }
    if saved.input_shape != expected.input_shape {
        return mismatch(
            "input_shape",
            &format!("{:?}", saved.input_shape),
            &format!("{:?}", expected.input_shape),
        );
    }
    if saved.peer_input_shape != expected.peer_input_shape {
        return mismatch(
            "peer_input_shape",
            &format!("{:?}", saved.peer_input_shape),
            &format!("{:?}", expected.peer_input_shape),
        );
    }
    if saved.epoch > expected.total_epochs {
        return mismatch("epoch", &saved.epoch, &format!("<= {}", expected.total_epochs));
    }
    if saved.history.len() != saved.epoch {
        return Err(Error::Config(format!(
            "cannot resume: checkpoint records {} epochs of history but claims epoch {}",
            saved.history.len(),
            saved.epoch
        )));
    }
    Ok(())
}

fn init_label(mode: TrainMode, is_peer: bool) -> &'static str {
    match (mode, is_peer) {
        (TrainMode::BaselineShape, false) => "init/shape",
        (_, false) => "init/rgb",
        (_, true) => "init/shape",
    }
}

fn aug_label(mode: TrainMode, is_peer: bool) -> &'static str {
    match (mode, is_peer) {
        (TrainMode::BaselineShape, false) => "aug/shape",
        (_, false) => "aug/rgb",
        (_, true) => "aug/shape",
    }
}

fn guard_finite<F: Scalar>(
    v: F,
    mode: TrainMode,
    epoch: usize,
    batch: usize,
    which: &str,
) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!(
            "{} run: non-finite {which} loss at epoch {epoch}, batch {batch}",
            mode.as_str()
        )))
    }
}

pub(crate) fn gather(images: &Array4<f32>, indices: &[usize]) -> Array4<f32> {
    let s = images.shape();
    let mut out = Array4::<f32>::zeros((indices.len(), s[1], s[2], s[3]));
    for (row, &i) in indices.iter().enumerate() {
        out.index_axis_mut(Axis(0), row)
            .assign(&images.index_axis(Axis(0), i));
    }
    out
}

/// Forward a model over `images` in evaluation mode, in fixed-size
/// chunks; returns the logits.
pub fn predict_logits<F: Scalar>(
    model: &mut dyn Model<F>,
    images: &Array4<f32>,
    batch_size: usize,
) -> Array2<F> {
    let n = images.shape()[0];
    let k = model.num_classes();
    let mut out = Array2::<F>::zeros((n, k));
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let chunk = images.slice(ndarray::s![start..end, .., .., ..]);
        let x = chunk.map(|&v| num::cast::<F>(v as f64));
        let (_, logits) = model.forward_split(&x.view(), false);
        out.slice_mut(ndarray::s![start..end, ..]).assign(&logits);
        start = end;
    }
    out
}

/// Mean of per-model softmax outputs. `inputs[i]` is fed to `models[i]`,
/// so members may consume different views of the same samples.
pub fn ensemble_predict<F: Scalar>(
    models: &mut [&mut dyn Model<F>],
    inputs: &[Array4<f32>],
    batch_size: usize,
) -> Result<Array2<F>> {
    if models.is_empty() || models.len() != inputs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} models vs {} inputs",
            models.len(),
            inputs.len()
        )));
    }
    let n = inputs[0].shape()[0];
    let k = models[0].num_classes();
    let mut mean = Array2::<F>::zeros((n, k));
    for (model, input) in models.iter_mut().zip(inputs) {
        if input.shape()[0] != n {
            return Err(Error::ShapeMismatch(
                "ensemble members disagree on sample count".into(),
            ));
        }
        if model.num_classes() != k {
            return Err(Error::ShapeMismatch(
                "ensemble members disagree on class count".into(),
            ));
        }
        let logits = predict_logits(*model, input, batch_size);
        mean += &softmax(&logits.view());
    }
    let scale = num::cast::<F>(1.0 / models.len() as f64);
    Ok(mean * scale)
}

/// Ensemble of the co-trained pair: the RGB member sees raw images, the
/// shape member sees extractor outputs of the same images.
pub fn inbiased_ensemble_predict<F: Scalar>(
    rgb_model: &mut dyn Model<F>,
    shape_model: &mut dyn Model<F>,
    batch: &ImageBatch,
    extractor: &ShapeExtractorConfig,
    batch_size: usize,
) -> Result<Array2<F>> {
    let shaped = extract_shape(batch, extractor)?;
    ensemble_predict(
        &mut [rgb_model, shape_model],
        &[batch.images.clone(), shaped.images],
        batch_size,
    )
}
