//! L∞ projected-gradient attacks and adversarial training.
//!
//! The attack perturbs pixels within an ε-ball (ε given on the 1/255
//! scale) and keeps images inside [0,1]; model parameters are read-only
//! while the attack runs, and stochastic layers use their frozen
//! evaluation statistics for attack gradients. Two adversarial trainers
//! build on it: a Madry-style trainer where the RGB network learns on
//! attacked images while the shape network only ever sees shape views of
//! the natural images, and a TRADES-style trainer whose objective adds a
//! clean-vs-adversarial KL term with coefficient β.

use crate::augment::{augment, Augmentation};
use crate::batch::ImageBatch;
use crate::checkpoint::{CheckpointKind, CheckpointMeta};
use crate::config::TrainConfig;
use crate::data;
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy_grad, inbiased_losses_grad, kl_divergence_grad_both, trades_composite_grad,
    AlignmentWeights, LossTerms,
};
use crate::models::{build_model, Model};
use crate::nn::Sgd;
use crate::num::{self, Scalar};
use crate::record::{config_hash, EpochMetrics, RunRecord};
use crate::rng::{permutation, stream};
use crate::shape::{extract_shape, ShapeExtractorConfig};
use crate::trainer::{
    count_correct, gather, predict_logits, to_scalar, EpochSnapshot, TrainHooks, TrainOutput,
};
use ndarray::{Array1, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Samples attacked per inner forward/backward, so attack memory stays
/// bounded regardless of the evaluation batch size. Each chunk draws its
/// random start from its own named stream, which makes the attack
/// deterministic for a fixed seed independent of how callers batch.
const ATTACK_CHUNK: usize = 128;

/// Project one pixel: clamp the desired perturbation into the ε-ball,
/// clamp the result into [0,1], then walk back by ulps if the rounding
/// of `x + d` pushed the realized difference outside the ball (adding a
/// ball-sized δ to a pixel near 1.0 can overshoot ε by half an ulp of
/// the pixel, which is ~3e-8 — larger than the feasibility headroom the
/// attack guarantees).
#[inline]
fn project_pixel(x: f32, d: f32, eps: f32) -> f32 {
    let mut xa = (x + d.clamp(-eps, eps)).clamp(0.0, 1.0);
    while xa - x > eps {
        xa = xa.next_down();
    }
    while xa - x < -eps {
        xa = xa.next_up();
    }
    xa
}

/// Default step size for adversarial *training* on the [0,1] pixel
/// scale.
pub const DEFAULT_TRAIN_STEP: f64 = 0.03;

/// Perturbation norm. Only L∞ is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttackNorm {
    #[default]
    Linf,
}

/// Attack hyperparameters. `epsilon` is expressed in units of 1/255
/// (so `epsilon: 8.0` bounds each pixel change by 8/255); `step_size`
/// is on the raw [0,1] pixel scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_start: bool,
    #[serde(default)]
    pub norm: AttackNorm,
}

impl AttackSpec {
    pub fn new(epsilon: f64, steps: usize, step_size: f64, random_start: bool) -> Self {
        Self {
            epsilon,
            steps,
            step_size,
            random_start,
            norm: AttackNorm::Linf,
        }
    }

    /// Evaluation-time spec: step size 2.5·ε/steps with a random start.
    /// For ε = 0 the attack never steps, so a nominal positive step size
    /// is used to keep the spec well-formed.
    pub fn eval_spec(epsilon: f64, steps: usize) -> Self {
        let step_size = if epsilon > 0.0 {
            2.5 * (epsilon / 255.0) / steps as f64
        } else {
            1.0 / 255.0
        };
        Self::new(epsilon, steps, step_size, true)
    }

    /// Training-time spec: the conventional fixed step size
    /// [`DEFAULT_TRAIN_STEP`] with a random start.
    pub fn train_spec(epsilon: f64, steps: usize) -> Self {
        Self::new(epsilon, steps, DEFAULT_TRAIN_STEP, true)
    }

    /// ε converted to the [0,1] pixel scale.
    pub fn epsilon_pixels(&self) -> f64 {
        self.epsilon / 255.0
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::Config(format!(
                "attack epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("attack steps must be >= 1".into()));
        }
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(Error::Config(format!(
                "attack step_size must be finite and > 0, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// TRADES trade-off coefficient β (> 0) weighting the clean-vs-attacked
/// KL term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradesConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    5.0
}

impl Default for TradesConfig {
    fn default() -> Self {
        Self {
            beta: default_beta(),
        }
    }
}

impl TradesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "trades beta must be finite and > 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Objective the attack ascends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackLoss {
    /// Cross-entropy on the true labels.
    Ce,
    /// Cross-entropy plus β·KL(clean ‖ attacked), the inner objective of
    /// TRADES-style training.
    TradesKl { beta: f64 },
}

/// Run a projected-gradient L∞ attack against `model` and return the
/// attacked copy of `batch`.
///
/// Per chunk: optionally draw δ₀ uniformly inside the ε-ball, then for
/// each step take a signed ascent step on the attack loss, clamp δ back
/// into the ε-ball, and clamp x+δ into [0,1]. Forward passes run in
/// evaluation mode and parameters are left unchanged (gradient scratch
/// is zeroed on exit). ε = 0 returns the input bit-exactly. A fixed
/// `(seed, label)` pair makes the attack deterministic.
pub fn pgd_attack<F: Scalar>(
    model: &mut dyn Model<F>,
    batch: &ImageBatch,
    spec: &AttackSpec,
    loss: AttackLoss,
    seed: u64,
    label: &str,
) -> Result<ImageBatch> {
    spec.validate()?;
    if let AttackLoss::TradesKl { beta } = loss {
        TradesConfig { beta }.validate()?;
    }
    batch.ensure_finite("attack input")?;
    if batch.images.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Data(
            "attack input pixels must lie in [0,1]".into(),
        ));
    }
    if spec.epsilon == 0.0 {
        return Ok(batch.clone());
    }

    let eps = (spec.epsilon / 255.0) as f32;
    let step = spec.step_size as f32;
    let n = batch.len();
    let mut out = batch.images.clone();

    for (ci, start) in (0..n).step_by(ATTACK_CHUNK).enumerate() {
        let end = (start + ATTACK_CHUNK).min(n);
        let x0 = out.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        let labels = &batch.labels[start..end];
        let mut rng = stream(seed, &format!("{label}/{ci}"));

        let clean_logits = match loss {
            AttackLoss::TradesKl { .. } => {
                let xc = to_scalar::<F>(&x0);
                Some(model.forward_split(&xc.view(), false).1)
            }
            AttackLoss::Ce => None,
        };

        let mut x_adv = x0.clone();
        if spec.random_start {
            for v in x_adv.iter_mut() {
                *v += rng.gen_range(-eps..eps);
            }
        }
        // Project the start point (a no-op without a random start).
        Zip::from(&mut x_adv).and(&x0).for_each(|xa, &x| {
            *xa = project_pixel(x, *xa - x, eps);
        });

        for t in 0..spec.steps {
            let xs = to_scalar::<F>(&x_adv);
            let (_, logits) = model.forward_split(&xs.view(), false);
            let d_logits = match loss {
                AttackLoss::Ce => cross_entropy_grad(&logits.view(), labels)?.1,
                AttackLoss::TradesKl { beta } => {
                    let (_, mut d) = cross_entropy_grad(&logits.view(), labels)?;
                    let clean = clean_logits.as_ref().unwrap();
                    let (_, _, g_q) = kl_divergence_grad_both(&clean.view(), &logits.view())?;
                    let b = num::cast::<F>(beta);
                    Zip::from(&mut d).and(&g_q).for_each(|x, &g| *x = *x + b * g);
                    d
                }
            };
            let g = model.backward(&d_logits.view(), None);
            if g.iter().any(|v| !v.is_finite()) {
                model.zero_grad();
                return Err(Error::Divergence(format!(
                    "pgd_attack: non-finite input gradient at step {t}, chunk {ci}"
                )));
            }
            Zip::from(&mut x_adv).and(&x0).and(&g).for_each(|xa, &x, &gi| {
                let s = if gi > F::zero() {
                    1.0f32
                } else if gi < F::zero() {
                    -1.0
                } else {
                    0.0
                };
                *xa = project_pixel(x, *xa - x + step * s, eps);
            });
        }
        out.slice_mut(ndarray::s![start..end, .., .., ..])
            .assign(&x_adv);
    }
    model.zero_grad();

    let mut attacked = ImageBatch::new(out, batch.labels.clone(), batch.num_classes)?;
    if let Some(groups) = &batch.groups {
        attacked = attacked.with_groups(groups.clone())?;
    }
    Ok(attacked)
}

/// Standalone one-shot FGSM, kept as an independent reference for the
/// single-step attack: x' = clamp₀₁(x + clamp_ε(step·sign(∇ₓ CE))).
pub fn fgsm_reference<F: Scalar>(
    model: &mut dyn Model<F>,
    batch: &ImageBatch,
    epsilon: f64,
    step_size: f64,
) -> Result<ImageBatch> {
    let eps = (epsilon / 255.0) as f32;
    let step = step_size as f32;
    let x = to_scalar::<F>(&batch.images);
    let (_, logits) = model.forward_split(&x.view(), false);
    let (_, d_logits) = cross_entropy_grad(&logits.view(), &batch.labels)?;
    let g = model.backward(&d_logits.view(), None);
    model.zero_grad();
    let mut out = batch.images.clone();
    Zip::from(&mut out).and(&g).for_each(|p, &gi| {
        let s = if gi > F::zero() {
            1.0f32
        } else if gi < F::zero() {
            -1.0
        } else {
            0.0
        };
        let x = *p;
        let mut xa = (x + (step * s).clamp(-eps, eps)).clamp(0.0, 1.0);
        // Same realized-difference guarantee as the iterated attack.
        while xa - x > eps {
            xa = xa.next_down();
        }
        while xa - x < -eps {
            xa = xa.next_up();
        }
        *p = xa;
    });
    ImageBatch::new(out, batch.labels.clone(), batch.num_classes)
}

/// The default evaluation grid of attack strengths, in 1/255 units.
pub const EVAL_EPSILONS: [f64; 7] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// Evaluation specs over [`EVAL_EPSILONS`] with the given step count.
pub fn default_eval_specs(steps: usize) -> Vec<AttackSpec> {
    EVAL_EPSILONS
        .iter()
        .map(|&e| AttackSpec::eval_spec(e, steps))
        .collect()
}

/// One row of a robustness table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub epsilon: f64,
    pub steps: usize,
    pub accuracy: f64,
}

/// Attack `batch` once per spec (cross-entropy PGD) and report accuracy
/// under each attack; the ε = 0 row is the clean accuracy.
pub fn evaluate_robustness<F: Scalar>(
    model: &mut dyn Model<F>,
    batch: &ImageBatch,
    specs: &[AttackSpec],
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    if batch.is_empty() {
        return Err(Error::Data("robustness evaluation set is empty".into()));
    }
    let mut rows = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let attacked = pgd_attack(model, batch, spec, AttackLoss::Ce, seed, &format!("eval/{i}"))?;
        let logits = predict_logits(model, &attacked.images, ATTACK_CHUNK);
        let correct = count_correct(&logits, &attacked.labels);
        rows.push(RobustnessRow {
            epsilon: spec.epsilon,
            steps: spec.steps,
            accuracy: correct as f64 / batch.len() as f64,
        });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct MadryHashInput<'a> {
    cfg: &'a TrainConfig,
    attack: &'a AttackSpec,
}

#[derive(Serialize)]
struct TradesHashInput<'a> {
    cfg: &'a TrainConfig,
    attack: &'a AttackSpec,
    trades: &'a TradesConfig,
}

/// Madry-style adversarial co-training, loading the dataset named in the
/// config. See [`train_madry_inbiased_with_data`].
pub fn train_madry_inbiased<F: Scalar>(
    cfg: &TrainConfig,
    attack: &AttackSpec,
) -> Result<TrainOutput<F>> {
    let batch = data::load_rgb(&cfg.dataset)?;
    train_madry_inbiased_with_data(cfg, attack, &batch)
}

/// Madry-style adversarial co-training on an already-loaded batch.
///
/// Per batch the RGB network is attacked with cross-entropy PGD and then
/// trained on the attacked images with its alignment terms computed
/// against the shape network's outputs on shape views of the *natural*
/// images; the shape network itself trains on cross-entropy alone, so no
/// alignment gradient ever reaches it and its updates match a plain
/// shape baseline on the same streams.
pub fn train_madry_inbiased_with_data<F: Scalar>(
    cfg: &TrainConfig,
    attack: &AttackSpec,
    train_data: &ImageBatch,
) -> Result<TrainOutput<F>> {
    train_madry_inbiased_hooked(cfg, attack, train_data, TrainHooks::default())
}

/// [`train_madry_inbiased_with_data`] with resume support and an
/// after-epoch callback.
pub fn train_madry_inbiased_hooked<F: Scalar>(
    cfg: &TrainConfig,
    attack: &AttackSpec,
    train_data: &ImageBatch,
    hooks: TrainHooks<'_, F>,
) -> Result<TrainOutput<F>> {
    let hash = config_hash(&MadryHashInput { cfg, attack })?;
    adversarial_train_loop(cfg, attack, None, train_data, hash, hooks)
}

/// TRADES-style adversarial co-training, loading the dataset named in
/// the config. See [`train_trades_inbiased_with_data`].
pub fn train_trades_inbiased<F: Scalar>(
    cfg: &TrainConfig,
    attack: &AttackSpec,
    trades: &TradesConfig,
) -> Result<TrainOutput<F>> {
    let batch = data::load_rgb(&cfg.dataset)?;
    train_trades_inbiased_with_data(cfg, attack, trades, &batch)
}

/// TRADES-style adversarial co-training on an already-loaded batch.
///
/// The attack ascends CE + β·KL(clean ‖ attacked); the RGB network's
/// loss is that same expression at the attacked point plus its alignment
/// terms, with gradient flowing through both the clean and the attacked
/// forward pass. The shape network trains on cross-entropy alone.
pub fn train_trades_inbiased_with_data<F: Scalar>(
    cfg: &TrainConfig,
    attack: &AttackSpec,
    trades: &TradesConfig,
    train_data: &ImageBatch,
) -> Result<TrainOutput<F>> {
    train_trades_inbiased_hooked(cfg, attack, trades, train_data, TrainHooks::default())
}

/// [`train_trades_inbiased_with_data`] with resume support and an
/// after-epoch callback.
pub fn train_trades_inbiased_hooked<F: Scalar>(
    cfg: &TrainConfig,
    attack: &AttackSpec,
    trades: &TradesConfig,
    train_data: &ImageBatch,
    hooks: TrainHooks<'_, F>,
) -> Result<TrainOutput<F>> {
    trades.validate()?;
    let hash = config_hash(&TradesHashInput { cfg, attack, trades })?;
    adversarial_train_loop(cfg, attack, Some(trades.beta), train_data, hash, hooks)
}

/// Shared loop for the two adversarial trainers. `trades_beta` selects
/// the objective: `None` = Madry (CE on attacked images), `Some(β)` =
/// TRADES (CE on attacked + β·KL against the clean forward).
fn adversarial_train_loop<F: Scalar>(
    cfg: &TrainConfig,
    attack: &AttackSpec,
    trades_beta: Option<f64>,
    train_data: &ImageBatch,
    hash: String,
    mut hooks: TrainHooks<'_, F>,
) -> Result<TrainOutput<F>> {
    cfg.validate()?;
    attack.validate()?;
    if train_data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    train_data.ensure_finite("training data")?;
    let num_classes = train_data.num_classes;
    let seed = cfg.seed;
    let extractor = ShapeExtractorConfig::default();
    let mode = if trades_beta.is_some() {
        "trades_inbiased"
    } else {
        "madry_inbiased"
    };

    // Shape views come from the natural images, precomputed once.
    let shape_store = extract_shape(train_data, &extractor)?;
    let mut primary_pipeline = vec!["load"];
    let mut peer_pipeline = vec!["load", "extract_shape"];
    if cfg.augmentation == Augmentation::CropFlip {
        primary_pipeline.push("augment");
        peer_pipeline.push("augment");
    }
    primary_pipeline.push("pgd_attack");

    let rgb_shape = {
        let s = train_data.images.shape();
        (s[1], s[2], s[3])
    };
    let shape_shape = {
        let s = shape_store.images.shape();
        (s[1], s[2], s[3])
    };
    let meta_template = CheckpointMeta {
        kind: CheckpointKind::Full,
        mode: mode.to_string(),
        config_hash: hash.clone(),
        epoch: 0,
        total_epochs: cfg.epochs,
        dataset: cfg.dataset.name.to_string(),
        arch: cfg.arch.to_string(),
        seed,
        num_classes,
        input_shape: rgb_shape,
        peer_input_shape: Some(shape_shape),
        label_map: (0..num_classes).map(|k| format!("class_{k}")).collect(),
        scalar_width: std::mem::size_of::<F>(),
        history: Vec::new(),
    };

    let mut opt_rgb = Sgd::<F>::new(cfg.momentum, cfg.weight_decay);
    let mut opt_shp = Sgd::<F>::new(cfg.momentum, cfg.weight_decay);
    let mut record = RunRecord::new(
        mode,
        hash,
        cfg.dataset.name.to_string(),
        cfg.arch.to_string(),
        seed,
    );

    let mut start_epoch = 0;
    let (mut rgb, mut shp): (Box<dyn Model<F>>, Box<dyn Model<F>>) = match hooks.resume.take() {
        Some(state) => {
            crate::trainer::check_resume_meta(&state.meta, &meta_template)?;
            let peer = state.peer.ok_or_else(|| {
                Error::Config("cannot resume: checkpoint is missing the shape network".into())
            })?;
            opt_rgb.set_buffers(state.opt_primary);
            opt_shp.set_buffers(state.opt_peer);
            start_epoch = state.meta.epoch;
            record.epochs = state.meta.history;
            (state.primary, peer)
        }
        None => (
            build_model::<F>(cfg.arch, num_classes, rgb_shape, &mut stream(seed, "init/rgb"))?,
            build_model::<F>(
                cfg.arch,
                num_classes,
                shape_shape,
                &mut stream(seed, "init/shape"),
            )?,
        ),
    };

    let scheduler = cfg.scheduler.build(cfg.epochs);
    let started = std::time::Instant::now();

    // The shape network never receives alignment gradient.
    let weights = AlignmentWeights {
        lambda_rgb: cfg.weights.lambda_rgb,
        gamma_rgb: cfg.weights.gamma_rgb,
        lambda_shape: 0.0,
        gamma_shape: 0.0,
    };

    let n = train_data.len();
    for epoch in start_epoch..cfg.epochs {
        let lr = scheduler.lr(cfg.lr, epoch);
        let order = permutation(seed, &format!("shuffle/{epoch}"), n);
        let mut acc_rgb = crate::trainer::EpochAccumulator::new();
        let mut acc_shp = crate::trainer::EpochAccumulator::new();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let labels: Vec<u32> = chunk.iter().map(|&i| train_data.labels[i]).collect();
            let x_rgb = augment(
                &gather(&train_data.images, chunk),
                cfg.augmentation,
                seed,
                &format!("aug/rgb/{epoch}/{b}"),
            );
            let x_shp = augment(
                &gather(&shape_store.images, chunk),
                cfg.augmentation,
                seed,
                &format!("aug/shape/{epoch}/{b}"),
            );

            let natural = ImageBatch::new(x_rgb, labels.clone(), num_classes)?;
            let attack_loss = match trades_beta {
                Some(beta) => AttackLoss::TradesKl { beta },
                None => AttackLoss::Ce,
            };
            let attacked = pgd_attack(
                rgb.as_mut(),
                &natural,
                attack,
                attack_loss,
                seed,
                &format!("attack/{epoch}/{b}"),
            )?;

            let xq = to_scalar::<F>(&x_shp);
            let (z_q, logits_q) = shp.forward_split(&xq.view(), true);

            let terms_rgb: LossTerms<F>;
            let terms_shp: LossTerms<F>;
            let correct_rgb;
            match trades_beta {
                None => {
                    // Madry: train the RGB network on the attacked batch
                    // with alignment against the detached shape outputs.
                    let xa = to_scalar::<F>(&attacked.images);
                    let (z_p, logits_p) = rgb.forward_split(&xa.view(), true);
                    let (losses, grads) = inbiased_losses_grad(
                        &logits_p.view(),
                        &z_p.view(),
                        &logits_q.view(),
                        &z_q.view(),
                        &labels,
                        &weights,
                    )?;
                    guard_finite(losses.rgb.total, mode, epoch, b, "primary")?;
                    guard_finite(losses.shape.total, mode, epoch, b, "peer")?;
                    rgb.zero_grad();
                    rgb.backward(&grads.d_rgb_logits.view(), Some(&grads.d_rgb_z.view()));
                    opt_rgb.step(lr, &mut rgb.params_mut());
                    shp.zero_grad();
                    shp.backward(&grads.d_shape_logits.view(), None);
                    opt_shp.step(lr, &mut shp.params_mut());
                    correct_rgb = count_correct(&logits_p, &labels);
                    terms_rgb = losses.rgb;
                    terms_shp = losses.shape;
                }
                Some(beta) => {
                    // TRADES: gradient flows through both the clean and
                    // the attacked forward pass of the RGB network. The
                    // attacked pass is re-run last so its activations are
                    // the ones cached for the first backward; the clean
                    // pass is then re-run (identical activations — batch
                    // statistics don't depend on running statistics) for
                    // the second backward, with running statistics
                    // snapshotted and restored around it so they are
                    // updated once per forward view, clean then attacked.
                    let xc = to_scalar::<F>(&natural.images);
                    let xa = to_scalar::<F>(&attacked.images);
                    let (_, logits_c) = rgb.forward_split(&xc.view(), true);
                    let (z_a, logits_a) = rgb.forward_split(&xa.view(), true);
                    let (terms, d_clean, d_adv, d_z) = trades_composite_grad(
                        &logits_c.view(),
                        &logits_a.view(),
                        &z_a.view(),
                        &logits_q.view(),
                        &z_q.view(),
                        &labels,
                        beta,
                        weights.lambda_rgb,
                        weights.gamma_rgb,
                    )?;
                    let (ce_q, d_logits_q) = cross_entropy_grad(&logits_q.view(), &labels)?;
                    guard_finite(terms.total, mode, epoch, b, "primary")?;
                    guard_finite(ce_q, mode, epoch, b, "peer")?;
                    rgb.zero_grad();
                    rgb.backward(&d_adv.view(), Some(&d_z.view()));
                    let snapshot: Vec<Array1<f64>> = rgb
                        .running_stats_mut()
                        .into_iter()
                        .map(|(_, a)| a.clone())
                        .collect();
                    rgb.forward_split(&xc.view(), true);
                    for ((_, stat), saved) in
                        rgb.running_stats_mut().iter_mut().zip(&snapshot)
                    {
                        stat.assign(saved);
                    }
                    rgb.backward(&d_clean.view(), None);
                    opt_rgb.step(lr, &mut rgb.params_mut());
                    shp.zero_grad();
                    shp.backward(&d_logits_q.view(), None);
                    opt_shp.step(lr, &mut shp.params_mut());
                    correct_rgb = count_correct(&logits_a, &labels);
                    terms_rgb = terms;
                    terms_shp = LossTerms {
                        total: ce_q,
                        ce: ce_q,
                        da: F::zero(),
                        fa: F::zero(),
                    };
                }
            }
            acc_rgb.add(&terms_rgb, correct_rgb, labels.len());
            acc_shp.add(&terms_shp, count_correct(&logits_q, &labels), labels.len());
        }
        record.epochs.push(EpochMetrics {
            epoch,
            lr,
            loss: acc_rgb.mean(acc_rgb.total),
            ce: acc_rgb.mean(acc_rgb.ce),
            da: acc_rgb.mean(acc_rgb.da),
            fa: acc_rgb.mean(acc_rgb.fa),
            train_acc: acc_rgb.correct as f64 / acc_rgb.count.max(1) as f64,
            peer_loss: Some(acc_shp.mean(acc_shp.total)),
            peer_ce: Some(acc_shp.mean(acc_shp.ce)),
            peer_da: Some(acc_shp.mean(acc_shp.da)),
            peer_fa: Some(acc_shp.mean(acc_shp.fa)),
            peer_train_acc: Some(acc_shp.correct as f64 / acc_shp.count.max(1) as f64),
        });

        if let Some(hook) = hooks.after_epoch.as_mut() {
            let mut meta = meta_template.clone();
            meta.epoch = epoch + 1;
            meta.history = record.epochs.clone();
            let mut snapshot = EpochSnapshot {
                meta,
                is_final: epoch + 1 == cfg.epochs,
                primary: rgb.as_mut(),
                peer: Some(shp.as_mut()),
                opt_primary: &opt_rgb,
                opt_peer: &opt_shp,
            };
            hook(&mut snapshot)?;
        }
    }
    record.wall_seconds = started.elapsed().as_secs_f64();

    Ok(TrainOutput {
        primary: rgb,
        peer: Some(shp),
        record,
        primary_pipeline,
        peer_pipeline: Some(peer_pipeline),
    })
}

fn guard_finite<F: Scalar>(v: F, mode: &str, epoch: usize, batch: usize, which: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!(
            "{mode} run: non-finite {which} loss at epoch {epoch}, batch {batch}"
        )))
    }
}
