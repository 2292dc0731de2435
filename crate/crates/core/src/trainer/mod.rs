//! Training loops and their loss bookkeeping.

mod config;
mod predict;
mod recon;

pub use config::{parse_flat_config, FlatConfig, PRED_KEYS, RECON_KEYS};
pub use predict::{
    extract_windows, train_predictor, PredStepLog, PredTrainConfig, PredTrainOutcome, TrainWindow,
    PRED_LOG_FILE,
};
pub use recon::{
    synth_suite, train_recon, ReconStepLog, TrainCheckpoint, TrainOptions, TrainOutcome,
    FINAL_CHECKPOINT, LOG_FILE, NAN_DUMP,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::sampler::AnnealSchedule;
use crate::tensor::Mat;

/// One evaluation of the reconstruction objective.
///
/// `total = motion_l2 + quant_codebook + quant_commit + alpha * mask_loss`,
/// plus `sparsity_weight * sparsity_loss` when the sparsity ablation is on,
/// evaluated left to right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconLossReport {
    pub motion_l2: f64,
    pub quant_codebook: f64,
    pub quant_commit: f64,
    pub mask_loss: f64,
    pub alpha: f64,
    pub sparsity_loss: f64,
    pub sparsity_weight: f64,
    pub total: f64,
}

impl ReconLossReport {
    pub fn compose(
        motion_l2: f64,
        quant_codebook: f64,
        quant_commit: f64,
        mask_loss: f64,
        alpha: f64,
        sparsity: Option<(f64, f64)>,
    ) -> Self {
        let mut total = motion_l2 + quant_codebook + quant_commit + alpha * mask_loss;
        let (sparsity_loss, sparsity_weight) = sparsity.unwrap_or((0.0, 0.0));
        if sparsity.is_some() {
            total += sparsity_weight * sparsity_loss;
        }
        ReconLossReport {
            motion_l2,
            quant_codebook,
            quant_commit,
            mask_loss,
            alpha,
            sparsity_loss,
            sparsity_weight,
            total,
        }
    }

    /// Whether `total` equals its recomposition bit for bit.
    pub fn is_consistent(&self) -> bool {
        let sparsity = (self.sparsity_weight != 0.0).then_some((self.sparsity_loss, self.sparsity_weight));
        let r = Self::compose(
            self.motion_l2,
            self.quant_codebook,
            self.quant_commit,
            self.mask_loss,
            self.alpha,
            sparsity,
        );
        r.total.to_bits() == self.total.to_bits()
    }
}

/// `Σ_c |p_c − max p|` with `p = softmax(logits)`.
pub fn mask_loss(logits: &[f64]) -> f64 {
    let p = crate::autodiff::softmax_rows(&Mat::row_vector(logits));
    let mx = p.data().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    p.data().iter().map(|v| (v - mx).abs()).sum()
}

pub fn mask_loss_graph(g: &mut Graph, logits: Var) -> Var {
    let p = g.softmax_rows(logits);
    let mx = g.max_all(p);
    let neg = g.scale(mx, -1.0);
    let d = g.add_col(p, neg);
    let a = g.abs(d);
    g.sum_all(a)
}

/// Value-level objective for a finished reconstruction.
pub fn recon_loss(
    seq: &Mat,
    recon: &Mat,
    vq_terms: Option<(f64, f64)>,
    mask_logits: Option<&[f64]>,
    alpha: f64,
) -> Result<ReconLossReport> {
    if seq.shape() != recon.shape() {
        return Err(Error::dim(format!("target {:?} vs reconstruction {:?}", seq.shape(), recon.shape())));
    }
    let motion = crate::inpainter::mse(recon, seq);
    let (cb, cm) = vq_terms.unwrap_or((0.0, 0.0));
    let m = mask_logits.map_or(0.0, mask_loss);
    Ok(ReconLossReport::compose(motion, cb, cm, m, alpha, None))
}

/// `|Σ p − K|`.
pub fn sparsity_loss(frame_probs: &[f64], k_target: usize) -> f64 {
    (frame_probs.iter().sum::<f64>() - k_target as f64).abs()
}

/// Sparsity term on `sigmoid(logits)`.
pub fn sparsity_loss_graph(g: &mut Graph, logits: Var, k_target: usize) -> Var {
    let neg = g.scale(logits, -1.0);
    let e = g.exp(neg);
    let d = g.add_scalar(e, 1.0);
    let p = g.powf(d, -1.0);
    let s = g.sum_all(p);
    let s = g.add_scalar(s, -(k_target as f64));
    g.abs(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_main: f64,
    pub lr_logits: f64,
    /// Cosine schedule floor as a fraction of each peak rate.
    pub lr_min_ratio: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub steps: usize,
    pub batch: usize,
    pub samples_per_seq: usize,
    pub tau: AnnealSchedule,
    pub seed: u64,
    /// Weight of the mask term.
    pub alpha: f64,
    pub grad_clip: f64,
    /// Write a checkpoint every n steps (0: final only).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_main: 1e-3,
            lr_logits: 1e-4,
            lr_min_ratio: 0.05,
            betas: (0.9, 0.98),
            weight_decay: 0.01,
            steps: 5000,
            batch: 8,
            samples_per_seq: 4,
            tau: AnnealSchedule::default(),
            seed: 0,
            alpha: 0.01,
            grad_clip: 1.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_main >= 0.0 && self.lr_logits >= 0.0 && self.lr_main.is_finite() && self.lr_logits.is_finite()) {
            return Err(Error::validation("learning rates must be finite and non-negative"));
        }
        if self.batch == 0 || self.samples_per_seq == 0 {
            return Err(Error::validation("batch and samples_per_seq must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lr_min_ratio) {
            return Err(Error::validation("lr_min_ratio must lie in [0, 1]"));
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return Err(Error::validation("grad_clip must be positive"));
        }
        self.tau.validate()
    }

    /// Temperature schedule stretched over this run, reaching `tau_end` at
    /// the last step.
    pub fn tau_schedule(&self) -> AnnealSchedule {
        AnnealSchedule {
            steps: self.steps.saturating_sub(1),
            ..self.tau
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityAblationConfig {
    pub enabled: bool,
    pub k_target: usize,
    pub weight: f64,
}

impl Default for SparsityAblationConfig {
    fn default() -> Self {
        SparsityAblationConfig {
            enabled: false,
            k_target: 7,
            weight: 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity_loss(&[1.0, 0.0, 1.0, 1.0, 0.0], 3), 0.0);
        assert_eq!(sparsity_loss(&[0.0; 6], 3), 3.0);
        assert_eq!(sparsity_loss(&[0.5; 10], 3), 2.0);
    }

    #[test]
    fn motion_term_is_plain_mse() {
        let a = Mat::zeros(2, 3);
        let b = Mat::filled(2, 3, 1.0);
        let r = recon_loss(&a, &b, None, None, 0.0).unwrap();
        assert_eq!(r.motion_l2, 1.0);
        assert_eq!(recon_loss(&a, &a, None, None, 0.0).unwrap().total, 0.0);
    }

    #[test]
    fn total_is_affine_in_alpha() {
        let a = Mat::from_fn(3, 2, |r, c| (r + c) as f64 * 0.3);
        let b = Mat::zeros(3, 2);
        let logits = [0.1, 2.0, -0.5];
        let t: Vec<ReconLossReport> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&al| recon_loss(&a, &b, Some((0.2, 0.3)), Some(&logits), al).unwrap())
            .collect();
        let slope = t[1].total - t[0].total;
        assert!((slope - t[0].mask_loss).abs() < 1e-12);
        assert!((t[2].total - t[1].total - slope).abs() < 1e-12);
        assert!(t.iter().all(|r| r.is_consistent()));
    }
}
