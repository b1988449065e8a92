//! Classification and alignment losses for the two-network objective.
//!
//! Each network minimizes its own cross-entropy plus two coupling terms
//! against a detached peer: decision alignment (KL divergence between the
//! softmax outputs, natural log, temperature 1) and feature alignment
//! (mean squared error between latent vectors). All reductions are means
//! over the batch. The peer's outputs are constants inside a network's own
//! loss, so the two simultaneous updates never backpropagate into each
//! other.

use crate::error::{Error, Result};
use crate::num::{cast, Scalar};
use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

/// Coupling strengths for the pair of per-network objectives.
///
/// `*_rgb` weights apply inside the RGB network's loss (its KL/MSE terms
/// against the shape peer); `*_shape` apply inside the shape network's
/// loss. All must be non-negative; zero disables the term entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentWeights {
    pub lambda_rgb: f64,
    pub lambda_shape: f64,
    pub gamma_rgb: f64,
    pub gamma_shape: f64,
}

impl Default for AlignmentWeights {
    fn default() -> Self {
        Self {
            lambda_rgb: 1.0,
            lambda_shape: 1.0,
            gamma_rgb: 1.0,
            gamma_shape: 5.0,
        }
    }
}

impl AlignmentWeights {
    pub fn zero() -> Self {
        Self {
            lambda_rgb: 0.0,
            lambda_shape: 0.0,
            gamma_rgb: 0.0,
            gamma_shape: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_rgb", self.lambda_rgb),
            ("lambda_shape", self.lambda_shape),
            ("gamma_rgb", self.gamma_rgb),
            ("gamma_shape", self.gamma_shape),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "alignment weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.lambda_rgb == 0.0
            && self.lambda_shape == 0.0
            && self.gamma_rgb == 0.0
            && self.gamma_shape == 0.0
    }
}

fn ensure_finite<F: Scalar>(a: &ArrayView2<'_, F>, context: &str) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(context.to_string()));
    }
    Ok(())
}

fn ensure_same_shape<F: Scalar>(
    a: &ArrayView2<'_, F>,
    b: &ArrayView2<'_, F>,
    context: &str,
) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{context}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Numerically stable log-softmax along axis 1.
pub fn log_softmax<F: Scalar>(logits: &ArrayView2<'_, F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| v - max);
        let log_sum = row.iter().map(|v| v.exp()).sum::<F>().ln();
        row.mapv_inplace(|v| v - log_sum);
    }
    out
}

/// Softmax along axis 1 (rows sum to 1).
pub fn softmax<F: Scalar>(logits: &ArrayView2<'_, F>) -> Array2<F> {
    let mut out = log_softmax(logits);
    out.mapv_inplace(F::exp);
    out
}

/// Mean cross-entropy of logits against integer labels.
pub fn cross_entropy<F: Scalar>(logits: &ArrayView2<'_, F>, labels: &[u32]) -> Result<F> {
    Ok(cross_entropy_grad(logits, labels)?.0)
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_grad<F: Scalar>(
    logits: &ArrayView2<'_, F>,
    labels: &[u32],
) -> Result<(F, Array2<F>)> {
    ensure_finite(logits, "cross_entropy logits")?;
    let (n, k) = logits.dim();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "cross_entropy: {n} logit rows vs {} labels",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::ShapeMismatch("cross_entropy: empty batch".into()));
    }
    let lsm = log_softmax(logits);
    let inv_n = cast::<F>(1.0 / n as f64);
    let mut loss = F::zero();
    let mut grad = lsm.mapv(F::exp);
    for (i, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if y >= k {
            return Err(Error::Data(format!(
                "cross_entropy: label {y} out of range for {k} classes"
            )));
        }
        loss = loss - lsm[[i, y]];
        grad[[i, y]] = grad[[i, y]] - F::one();
    }
    grad.mapv_inplace(|v| v * inv_n);
    Ok((loss * inv_n, grad))
}

/// Decision alignment: mean over the batch of
/// `KL(softmax(own) || softmax(peer))` in nats.
///
/// The peer argument is a constant (no gradient flows into it); the
/// returned value is always >= 0 up to rounding.
pub fn decision_alignment<F: Scalar>(
    own_logits: &ArrayView2<'_, F>,
    peer_logits: &ArrayView2<'_, F>,
) -> Result<F> {
    Ok(decision_alignment_grad(own_logits, peer_logits)?.0)
}

/// Decision alignment plus its gradient with respect to `own_logits`.
pub fn decision_alignment_grad<F: Scalar>(
    own_logits: &ArrayView2<'_, F>,
    peer_logits: &ArrayView2<'_, F>,
) -> Result<(F, Array2<F>)> {
    ensure_finite(own_logits, "decision_alignment own logits")?;
    ensure_finite(peer_logits, "decision_alignment peer logits")?;
    ensure_same_shape(own_logits, peer_logits, "decision_alignment")?;
    let n = own_logits.nrows();
    if n == 0 {
        return Err(Error::ShapeMismatch("decision_alignment: empty batch".into()));
    }
    let lp = log_softmax(own_logits);
    let lq = log_softmax(peer_logits);
    let p = lp.mapv(F::exp);
    let inv_n = cast::<F>(1.0 / n as f64);
    let mut total = F::zero();
    let mut grad = Array2::zeros(own_logits.raw_dim());
    for i in 0..n {
        let mut row_kl = F::zero();
        for j in 0..own_logits.ncols() {
            row_kl = row_kl + p[[i, j]] * (lp[[i, j]] - lq[[i, j]]);
        }
        total = total + row_kl;
        for j in 0..own_logits.ncols() {
            grad[[i, j]] = p[[i, j]] * (lp[[i, j]] - lq[[i, j]] - row_kl) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// Batch-mean KL divergence with gradients for *both* argument sides.
///
/// Used by the robustness regularizer, where clean and perturbed logits
/// come from the same network and both carry gradient.
pub fn kl_divergence_grad_both<F: Scalar>(
    p_logits: &ArrayView2<'_, F>,
    q_logits: &ArrayView2<'_, F>,
) -> Result<(F, Array2<F>, Array2<F>)> {
    ensure_finite(p_logits, "kl p logits")?;
    ensure_finite(q_logits, "kl q logits")?;
    ensure_same_shape(p_logits, q_logits, "kl_divergence")?;
    let n = p_logits.nrows();
    if n == 0 {
        return Err(Error::ShapeMismatch("kl_divergence: empty batch".into()));
    }
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    let p = lp.mapv(F::exp);
    let q = lq.mapv(F::exp);
    let inv_n = cast::<F>(1.0 / n as f64);
    let mut total = F::zero();
    let mut grad_p = Array2::zeros(p_logits.raw_dim());
    let mut grad_q = Array2::zeros(q_logits.raw_dim());
    for i in 0..n {
        let mut row_kl = F::zero();
        for j in 0..p_logits.ncols() {
            row_kl = row_kl + p[[i, j]] * (lp[[i, j]] - lq[[i, j]]);
        }
        total = total + row_kl;
        for j in 0..p_logits.ncols() {
            grad_p[[i, j]] = p[[i, j]] * (lp[[i, j]] - lq[[i, j]] - row_kl) * inv_n;
            grad_q[[i, j]] = (q[[i, j]] - p[[i, j]]) * inv_n;
        }
    }
    Ok((total * inv_n, grad_p, grad_q))
}

/// Feature alignment: mean over batch x latent-dim of squared differences.
pub fn feature_alignment<F: Scalar>(
    z_own: &ArrayView2<'_, F>,
    z_peer: &ArrayView2<'_, F>,
) -> Result<F> {
    Ok(feature_alignment_grad(z_own, z_peer)?.0)
}

/// Feature alignment plus its gradient with respect to `z_own`.
pub fn feature_alignment_grad<F: Scalar>(
    z_own: &ArrayView2<'_, F>,
    z_peer: &ArrayView2<'_, F>,
) -> Result<(F, Array2<F>)> {
    ensure_finite(z_own, "feature_alignment own latent")?;
    ensure_finite(z_peer, "feature_alignment peer latent")?;
    ensure_same_shape(z_own, z_peer, "feature_alignment")?;
    let count = z_own.len();
    if count == 0 {
        return Err(Error::ShapeMismatch("feature_alignment: empty latent".into()));
    }
    let inv = cast::<F>(1.0 / count as f64);
    let two = cast::<F>(2.0);
    let mut total = F::zero();
    let mut grad = Array2::zeros(z_own.raw_dim());
    Zip::from(&mut grad)
        .and(z_own)
        .and(z_peer)
        .for_each(|g, &a, &b| {
            let d = a - b;
            total = total + d * d;
            *g = two * d * inv;
        });
    Ok((total * inv, grad))
}

/// The loss of one network, split into its terms. `total = ce + λ·da + γ·fa`.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms<F> {
    pub total: F,
    pub ce: F,
    pub da: F,
    pub fa: F,
}

/// Both networks' losses for one batch.
#[derive(Debug, Clone, Copy)]
pub struct PairLosses<F> {
    pub rgb: LossTerms<F>,
    pub shape: LossTerms<F>,
}

/// Gradients of the pair objective with respect to each network's own
/// outputs. Cross-network entries are absent by construction: the peer is
/// detached.
#[derive(Debug, Clone)]
pub struct PairGrads<F> {
    pub d_rgb_logits: Array2<F>,
    pub d_rgb_z: Array2<F>,
    pub d_shape_logits: Array2<F>,
    pub d_shape_z: Array2<F>,
}

/// Evaluate both per-network objectives (scalars only).
pub fn inbiased_losses<F: Scalar>(
    rgb_logits: &ArrayView2<'_, F>,
    rgb_z: &ArrayView2<'_, F>,
    shape_logits: &ArrayView2<'_, F>,
    shape_z: &ArrayView2<'_, F>,
    labels: &[u32],
    weights: &AlignmentWeights,
) -> Result<PairLosses<F>> {
    Ok(inbiased_losses_grad(rgb_logits, rgb_z, shape_logits, shape_z, labels, weights)?.0)
}

/// Evaluate both objectives together with the gradients each network needs
/// for its update step.
///
/// When a term's weight is exactly zero the term is skipped entirely, so a
/// run with all-zero weights performs the very same float operations as a
/// plain cross-entropy trainer.
pub fn inbiased_losses_grad<F: Scalar>(
    rgb_logits: &ArrayView2<'_, F>,
    rgb_z: &ArrayView2<'_, F>,
    shape_logits: &ArrayView2<'_, F>,
    shape_z: &ArrayView2<'_, F>,
    labels: &[u32],
    weights: &AlignmentWeights,
) -> Result<(PairLosses<F>, PairGrads<F>)> {
    weights.validate()?;
    ensure_same_shape(rgb_logits, shape_logits, "paired logits")?;
    ensure_same_shape(rgb_z, shape_z, "paired latents")?;
    if rgb_logits.nrows() != rgb_z.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "logits have {} rows but latents {}",
            rgb_logits.nrows(),
            rgb_z.nrows()
        )));
    }

    let (rgb, d_rgb_logits, d_rgb_z) = one_side(
        rgb_logits,
        rgb_z,
        shape_logits,
        shape_z,
        labels,
        weights.lambda_rgb,
        weights.gamma_rgb,
    )?;
    let (shape, d_shape_logits, d_shape_z) = one_side(
        shape_logits,
        shape_z,
        rgb_logits,
        rgb_z,
        labels,
        weights.lambda_shape,
        weights.gamma_shape,
    )?;
    Ok((
        PairLosses { rgb, shape },
        PairGrads {
            d_rgb_logits,
            d_rgb_z,
            d_shape_logits,
            d_shape_z,
        },
    ))
}

fn one_side<F: Scalar>(
    own_logits: &ArrayView2<'_, F>,
    own_z: &ArrayView2<'_, F>,
    peer_logits: &ArrayView2<'_, F>,
    peer_z: &ArrayView2<'_, F>,
    labels: &[u32],
    lambda: f64,
    gamma: f64,
) -> Result<(LossTerms<F>, Array2<F>, Array2<F>)> {
    let (ce, mut d_logits) = cross_entropy_grad(own_logits, labels)?;
    let mut total = ce;
    let mut da = F::zero();
    let mut fa = F::zero();
    let mut d_z = Array2::zeros(own_z.raw_dim());
    if lambda != 0.0 {
        let (v, g) = decision_alignment_grad(own_logits, peer_logits)?;
        da = v;
        let w = cast::<F>(lambda);
        total = total + w * v;
        Zip::from(&mut d_logits).and(&g).for_each(|d, &gi| *d = *d + w * gi);
    }
    if gamma != 0.0 {
        let (v, g) = feature_alignment_grad(own_z, peer_z)?;
        fa = v;
        let w = cast::<F>(gamma);
        total = total + w * v;
        Zip::from(&mut d_z).and(&g).for_each(|d, &gi| *d = w * gi);
    }
    Ok((LossTerms { total, ce, da, fa }, d_logits, d_z))
}

/// Robustness-regularized loss of the RGB network:
/// `CE(adv) + beta·KL(p(clean) || p(adv)) + λ·DA(adv || peer) + γ·FA(z_adv, z_peer)`.
///
/// Gradients flow into clean and adversarial outputs of the network; the
/// peer stays detached. Returned gradients: (d_clean_logits, d_adv_logits,
/// d_adv_z).
#[allow(clippy::too_many_arguments)]
pub fn trades_composite_grad<F: Scalar>(
    clean_logits: &ArrayView2<'_, F>,
    adv_logits: &ArrayView2<'_, F>,
    adv_z: &ArrayView2<'_, F>,
    peer_logits: &ArrayView2<'_, F>,
    peer_z: &ArrayView2<'_, F>,
    labels: &[u32],
    beta: f64,
    lambda: f64,
    gamma: f64,
) -> Result<(LossTerms<F>, Array2<F>, Array2<F>, Array2<F>)> {
    if !(beta > 0.0) {
        return Err(Error::Config(format!("beta must be > 0, got {beta}")));
    }
    let (ce, mut d_adv) = cross_entropy_grad(adv_logits, labels)?;
    let (kl, g_clean, g_adv_kl) = kl_divergence_grad_both(clean_logits, adv_logits)?;
    let b = cast::<F>(beta);
    let mut total = ce + b * kl;
    let d_clean = g_clean.mapv(|v| v * b);
    Zip::from(&mut d_adv)
        .and(&g_adv_kl)
        .for_each(|d, &g| *d = *d + b * g);
    let mut da = F::zero();
    let mut fa = F::zero();
    let mut d_z = Array2::zeros(adv_z.raw_dim());
    if lambda != 0.0 {
        let (v, g) = decision_alignment_grad(adv_logits, peer_logits)?;
        da = v;
        let w = cast::<F>(lambda);
        total = total + w * v;
        Zip::from(&mut d_adv).and(&g).for_each(|d, &gi| *d = *d + w * gi);
    }
    if gamma != 0.0 {
        let (v, g) = feature_alignment_grad(adv_z, peer_z)?;
        fa = v;
        let w = cast::<F>(gamma);
        total = total + w * v;
        Zip::from(&mut d_z).and(&g).for_each(|d, &gi| *d = w * gi);
    }
    Ok((LossTerms { total, ce, da, fa }, d_clean, d_adv, d_z))
}

/// Scalar-only variant of [`trades_composite_grad`].
#[allow(clippy::too_many_arguments)]
pub fn trades_composite<F: Scalar>(
    clean_logits: &ArrayView2<'_, F>,
    adv_logits: &ArrayView2<'_, F>,
    adv_z: &ArrayView2<'_, F>,
    peer_logits: &ArrayView2<'_, F>,
    peer_z: &ArrayView2<'_, F>,
    labels: &[u32],
    beta: f64,
    lambda: f64,
    gamma: f64,
) -> Result<F> {
    Ok(trades_composite_grad(
        clean_logits,
        adv_logits,
        adv_z,
        peer_logits,
        peer_z,
        labels,
        beta,
        lambda,
        gamma,
    )?
    .0
    .total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr2, Array2};
    use rand::Rng;

    fn row(vals: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((1, vals.len()), vals.to_vec()).unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = arr2(&[[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]]);
        let p = softmax(&logits.view());
        for r in p.axis_iter(Axis(0)) {
            assert_abs_diff_eq!(r.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let logits = arr2(&[[0.3, -1.2, 2.0]]);
        let v = decision_alignment(&logits.view(), &logits.view()).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_half_half_against_quarter_three_quarters() {
        // softmax([0,0]) = [0.5, 0.5]; softmax([0, ln 3]) = [0.25, 0.75]
        let own = row(&[0.0, 0.0]);
        let peer = row(&[0.0, 3.0f64.ln()]);
        let v = decision_alignment(&own.view(), &peer.view()).unwrap();
        // direct summation oracle: sum p_i ln(p_i / q_i)
        let oracle = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.14384, epsilon = 1e-5);
    }

    #[test]
    fn kl_shift_invariance_in_own_logits() {
        let own = row(&[0.7, -0.2, 1.5]);
        let shifted = own.mapv(|v| v + 11.25);
        let peer = row(&[0.0, 0.4, -1.0]);
        let a = decision_alignment(&own.view(), &peer.view()).unwrap();
        let b = decision_alignment(&shifted.view(), &peer.view()).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn kl_non_negative_on_random_inputs() {
        let mut rng = crate::rng::stream(7, "test/kl-nonneg");
        for _ in 0..50 {
            let own = Array2::from_shape_fn((4, 6), |_| rng.gen_range(-4.0..4.0));
            let peer = Array2::from_shape_fn((4, 6), |_| rng.gen_range(-4.0..4.0));
            let v = decision_alignment(&own.view(), &peer.view()).unwrap();
            assert!(v >= -1e-12, "KL must be non-negative, got {v}");
        }
    }

    #[test]
    fn feature_alignment_hand_case() {
        let z = row(&[1.0, 2.0]);
        let zp = row(&[0.0, 0.0]);
        let v = feature_alignment(&z.view(), &zp.view()).unwrap();
        assert_abs_diff_eq!(v, 2.5, epsilon = 1e-12);
        // symmetric in values
        let w = feature_alignment(&zp.view(), &z.view()).unwrap();
        assert_abs_diff_eq!(v, w, epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let logits = arr2(&[[0.2, -0.3], [1.0, 0.5]]);
        let (ce, _) = cross_entropy_grad(&logits.view(), &[0, 1]).unwrap();
        let direct = |row: &[f64], y: usize| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            -(row[y] - m - z.ln())
        };
        let oracle = 0.5 * (direct(&[0.2, -0.3], 0) + direct(&[1.0, 0.5], 1));
        assert_abs_diff_eq!(ce, oracle, epsilon = 1e-12);
    }

    #[test]
    fn zero_weights_reduce_to_cross_entropy() {
        let rl = row(&[0.2, -0.3]);
        let rz = row(&[0.5, -1.0, 0.25]);
        let sl = row(&[1.0, 0.5]);
        let sz = row(&[0.0, 0.5, 0.5]);
        let out = inbiased_losses(
            &rl.view(),
            &rz.view(),
            &sl.view(),
            &sz.view(),
            &[0],
            &AlignmentWeights::zero(),
        )
        .unwrap();
        let ce_rgb = cross_entropy(&rl.view(), &[0]).unwrap();
        let ce_shape = cross_entropy(&sl.view(), &[0]).unwrap();
        assert_eq!(out.rgb.total, ce_rgb);
        assert_eq!(out.shape.total, ce_shape);
    }

    #[test]
    fn identical_outputs_make_alignment_vanish() {
        let l = arr2(&[[0.9, -0.1], [0.2, 0.4]]);
        let z = arr2(&[[1.0, 2.0], [3.0, -1.0]]);
        let out = inbiased_losses(
            &l.view(),
            &z.view(),
            &l.view(),
            &z.view(),
            &[0, 1],
            &AlignmentWeights::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(out.rgb.da, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.rgb.fa, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.rgb.total, out.rgb.ce, epsilon = 1e-12);
        assert_abs_diff_eq!(out.rgb.total, out.shape.total, epsilon = 1e-12);
    }

    #[test]
    fn composite_matches_independent_scalar_route() {
        // 1 sample, 2 classes, hand-set outputs; weights λ=2, γ=0.5
        let rl = row(&[0.2, -0.3]);
        let rz = row(&[0.5, -1.0, 0.25]);
        let sl = row(&[1.0, 0.5]);
        let sz = row(&[0.0, 0.5, 0.5]);
        let weights = AlignmentWeights {
            lambda_rgb: 2.0,
            lambda_shape: 0.0,
            gamma_rgb: 0.5,
            gamma_shape: 0.0,
        };
        let out = inbiased_losses(
            &rl.view(),
            &rz.view(),
            &sl.view(),
            &sz.view(),
            &[0],
            &weights,
        )
        .unwrap();

        // independent route, scalar arithmetic only
        let sm = |a: f64, b: f64| {
            let m = a.max(b);
            let z = (a - m).exp() + (b - m).exp();
            [(a - m).exp() / z, (b - m).exp() / z]
        };
        let p = sm(0.2, -0.3);
        let q = sm(1.0, 0.5);
        let ce = -p[0].ln();
        let kl = p[0] * (p[0] / q[0]).ln() + p[1] * (p[1] / q[1]).ln();
        let mse = ((0.5f64 - 0.0).powi(2) + (-1.0f64 - 0.5).powi(2) + (0.25f64 - 0.5).powi(2)) / 3.0;
        let oracle = ce + 2.0 * kl + 0.5 * mse;
        assert_abs_diff_eq!(out.rgb.total, oracle, epsilon = 1e-9);
    }

    #[test]
    fn trades_composite_matches_scalar_oracle() {
        let clean = row(&[0.8, -0.2]);
        let adv = row(&[0.1, 0.3]);
        let adv_z = row(&[1.0, -0.5]);
        let peer_l = row(&[0.4, 0.4]);
        let peer_z = row(&[0.5, 0.5]);
        let v = trades_composite(
            &clean.view(),
            &adv.view(),
            &adv_z.view(),
            &peer_l.view(),
            &peer_z.view(),
            &[1],
            5.0,
            1.0,
            0.5,
        )
        .unwrap();
        let sm = |a: f64, b: f64| {
            let m = a.max(b);
            let z = (a - m).exp() + (b - m).exp();
            [(a - m).exp() / z, (b - m).exp() / z]
        };
        let pc = sm(0.8, -0.2);
        let pa = sm(0.1, 0.3);
        let pp = sm(0.4, 0.4);
        let ce = -pa[1].ln();
        let kl_rob = pc[0] * (pc[0] / pa[0]).ln() + pc[1] * (pc[1] / pa[1]).ln();
        let kl_da = pa[0] * (pa[0] / pp[0]).ln() + pa[1] * (pa[1] / pp[1]).ln();
        let mse = ((1.0f64 - 0.5).powi(2) + (-0.5f64 - 0.5).powi(2)) / 2.0;
        let oracle = ce + 5.0 * kl_rob + 1.0 * kl_da + 0.5 * mse;
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::rng::stream(11, "test/loss-fd");
        let n = 3;
        let k = 4;
        let d = 5;
        let rl = Array2::from_shape_fn((n, k), |_| rng.gen_range(-2.0..2.0));
        let rz = Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0));
        let sl = Array2::from_shape_fn((n, k), |_| rng.gen_range(-2.0..2.0));
        let sz = Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0));
        let labels = [0u32, 2, 3];
        let weights = AlignmentWeights {
            lambda_rgb: 1.5,
            lambda_shape: 0.7,
            gamma_rgb: 0.3,
            gamma_shape: 2.0,
        };
        let (_, grads) =
            inbiased_losses_grad(&rl.view(), &rz.view(), &sl.view(), &sz.view(), &labels, &weights)
                .unwrap();
        let eps = 1e-6;
        let f = |rl: &Array2<f64>| {
            inbiased_losses(&rl.view(), &rz.view(), &sl.view(), &sz.view(), &labels, &weights)
                .unwrap()
                .rgb
                .total
        };
        for idx in [[0usize, 0usize], [1, 2], [2, 3]] {
            let mut plus = rl.clone();
            plus[idx] += eps;
            let mut minus = rl.clone();
            minus[idx] -= eps;
            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
            assert_abs_diff_eq!(grads.d_rgb_logits[idx], fd, epsilon = 1e-7);
        }
        // latent side
        let g = |rz: &Array2<f64>| {
            inbiased_losses(&rl.view(), &rz.view(), &sl.view(), &sz.view(), &labels, &weights)
                .unwrap()
                .rgb
                .total
        };
        let mut plus = rz.clone();
        plus[[1, 4]] += eps;
        let mut minus = rz.clone();
        minus[[1, 4]] -= eps;
        let fd = (g(&plus) - g(&minus)) / (2.0 * eps);
        assert_abs_diff_eq!(grads.d_rgb_z[[1, 4]], fd, epsilon = 1e-7);
    }

    #[test]
    fn trades_gradients_match_finite_differences() {
        let mut rng = crate::rng::stream(13, "test/trades-fd");
        let n = 2;
        let k = 3;
        let clean = Array2::from_shape_fn((n, k), |_| rng.gen_range(-2.0..2.0));
        let adv = Array2::from_shape_fn((n, k), |_| rng.gen_range(-2.0..2.0));
        let adv_z = Array2::from_shape_fn((n, 4), |_| rng.gen_range(-2.0..2.0));
        let pl = Array2::from_shape_fn((n, k), |_| rng.gen_range(-2.0..2.0));
        let pz = Array2::from_shape_fn((n, 4), |_| rng.gen_range(-2.0..2.0));
        let labels = [1u32, 0];
        let (_, d_clean, d_adv, d_z) = trades_composite_grad(
            &clean.view(),
            &adv.view(),
            &adv_z.view(),
            &pl.view(),
            &pz.view(),
            &labels,
            5.0,
            1.0,
            0.5,
        )
        .unwrap();
        let eval = |c: &Array2<f64>, a: &Array2<f64>, z: &Array2<f64>| {
            trades_composite(
                &c.view(),
                &a.view(),
                &z.view(),
                &pl.view(),
                &pz.view(),
                &labels,
                5.0,
                1.0,
                0.5,
            )
            .unwrap()
        };
        let eps = 1e-6;
        for idx in [[0usize, 0usize], [1, 2]] {
            let mut p = clean.clone();
            p[idx] += eps;
            let mut m = clean.clone();
            m[idx] -= eps;
            let fd = (eval(&p, &adv, &adv_z) - eval(&m, &adv, &adv_z)) / (2.0 * eps);
            assert_abs_diff_eq!(d_clean[idx], fd, epsilon = 1e-7);

            let mut p = adv.clone();
            p[idx] += eps;
            let mut m = adv.clone();
            m[idx] -= eps;
            let fd = (eval(&clean, &p, &adv_z) - eval(&clean, &m, &adv_z)) / (2.0 * eps);
            assert_abs_diff_eq!(d_adv[idx], fd, epsilon = 1e-7);
        }
        let mut p = adv_z.clone();
        p[[0, 3]] += eps;
        let mut m = adv_z.clone();
        m[[0, 3]] -= eps;
        let fd = (eval(&clean, &adv, &p) - eval(&clean, &adv, &m)) / (2.0 * eps);
        assert_abs_diff_eq!(d_z[[0, 3]], fd, epsilon = 1e-7);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let bad = row(&[f64::NAN, 0.0]);
        let ok = row(&[0.0, 0.0]);
        assert!(decision_alignment(&bad.view(), &ok.view()).is_err());
        assert!(decision_alignment(&ok.view(), &bad.view()).is_err());
        assert!(feature_alignment(&bad.view(), &ok.view()).is_err());
        assert!(cross_entropy(&bad.view(), &[0]).is_err());
    }

    #[test]
    fn negative_weights_rejected() {
        let w = AlignmentWeights {
            lambda_rgb: -1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }
}
