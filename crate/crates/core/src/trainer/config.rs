//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may repeat
//! only once; unknown keys are rejected by the typed readers below.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use super::{SparsityAblationConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::inpainter::{Architecture, Placement, ReconConfig};
use crate::nn::ModelDims;
use crate::predictor::{AudioInput, ClassWeights, PredictorConfig};
use crate::quantizer::CodebookKind;
use crate::sampler::{AnnealSchedule, AnnealShape};

use super::PredTrainConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

pub fn parse_flat_config(text: &str) -> Result<FlatConfig> {
    let mut entries = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if entries.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(FlatConfig { entries })
}

impl FlatConfig {
    pub fn read(path: &Path) -> Result<Self> {
        parse_flat_config(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key).ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
        v.parse()
            .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{v}`")))
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(_) => self.require(key),
        }
    }

    pub fn list_or(&self, key: &str, default: Vec<usize>) -> Result<Vec<usize>> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("key `{key}`: bad list item `{p}`")))
                })
                .collect(),
        }
    }

    /// Reject keys outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        let known: BTreeSet<&str> = known.iter().copied().collect();
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .map(String::as_str)
            .filter(|k| !known.contains(k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))))
        }
    }
}

fn choice<T: Copy>(cfg: &FlatConfig, key: &str, default: T, options: &[(&str, T)]) -> Result<T> {
    match cfg.raw(key) {
        None => Ok(default),
        Some(v) => options
            .iter()
            .find(|(name, _)| name.eq_ignore_ascii_case(v))
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                Error::Config(format!("key `{key}`: `{v}` is not one of {}", names.join("|")))
            }),
    }
}

fn dims(cfg: &FlatConfig, prefix: &str, d: ModelDims) -> Result<ModelDims> {
    Ok(ModelDims {
        model_dim: cfg.get_or(&format!("{prefix}.dim"), d.model_dim)?,
        heads: cfg.get_or(&format!("{prefix}.heads"), d.heads)?,
        layers: cfg.get_or(&format!("{prefix}.layers"), d.layers)?,
        ffn_dim: cfg.get_or(&format!("{prefix}.ffn"), d.ffn_dim)?,
    })
}

fn dim_keys(prefix: &str) -> Vec<String> {
    ["dim", "heads", "layers", "ffn"].iter().map(|s| format!("{prefix}.{s}")).collect()
}

/// Keys shared by both training commands besides the model sections.
const COMMON_KEYS: &[&str] = &[
    "data_dir",
    "out_dir",
    "steps",
    "batch",
    "seed",
    "lr_min_ratio",
    "beta1",
    "beta2",
    "weight_decay",
    "grad_clip",
    "checkpoint_every",
    "window_stride",
];

pub const RECON_KEYS: &[&str] = &[
    "samples_per_seq",
    "lr_main",
    "lr_logits",
    "alpha",
    "tau.start",
    "tau.end",
    "tau.shape",
    "frames",
    "k",
    "codebook",
    "fsq.levels",
    "vq.size",
    "placement",
    "architecture",
    "transition_pe",
    "sparsity.enabled",
    "sparsity.k_target",
    "sparsity.weight",
];

pub const PRED_KEYS: &[&str] = &[
    "lr",
    "dtw_weight",
    "dtw_gamma",
    "augment.prob",
    "augment.min",
    "augment.max",
    "weights",
    "weight0",
    "rollout.horizon",
];

impl FlatConfig {
    pub fn check_recon_keys(&self) -> Result<()> {
        let mut known: Vec<String> = COMMON_KEYS.iter().chain(RECON_KEYS).map(|s| s.to_string()).collect();
        known.extend(dim_keys("model"));
        known.extend(dim_keys("scorer"));
        self.check_known(&known.iter().map(String::as_str).collect::<Vec<_>>())
    }

    pub fn check_pred_keys(&self) -> Result<()> {
        let mut known: Vec<String> = COMMON_KEYS.iter().chain(PRED_KEYS).map(|s| s.to_string()).collect();
        known.extend(dim_keys("model"));
        self.check_known(&known.iter().map(String::as_str).collect::<Vec<_>>())
    }

    /// Model, optimisation and ablation settings for reconstruction training.
    /// `steps` is required; everything else has a default.
    pub fn recon_settings(&self, input_dim: usize) -> Result<(ReconConfig, TrainConfig, SparsityAblationConfig)> {
        self.check_recon_keys()?;
        let base = ReconConfig::default();
        let model = ReconConfig {
            input_dim,
            frames: self.get_or("frames", base.frames)?,
            k: self.get_or("k", base.k)?,
            dims: dims(self, "model", base.dims)?,
            scorer_dims: dims(self, "scorer", base.scorer_dims)?,
            codebook: self.get_or::<CodebookKind>("codebook", base.codebook)?,
            fsq_levels: self.list_or("fsq.levels", base.fsq_levels)?,
            vq_size: self.get_or("vq.size", base.vq_size)?,
            placement: choice(
                self,
                "placement",
                base.placement,
                &[("dynamic", Placement::Dynamic), ("static", Placement::Static)],
            )?,
            architecture: choice(
                self,
                "architecture",
                base.architecture,
                &[("sparse", Architecture::Sparse), ("dense", Architecture::Dense)],
            )?,
            transition_pe: self.get_or("transition_pe", base.transition_pe)?,
        };
        model.validate()?;
        let t = TrainConfig::default();
        let tau = AnnealSchedule {
            tau_start: self.get_or("tau.start", t.tau.tau_start)?,
            tau_end: self.get_or("tau.end", t.tau.tau_end)?,
            steps: t.tau.steps,
            shape: choice(
                self,
                "tau.shape",
                t.tau.shape,
                &[
                    ("linear", AnnealShape::Linear),
                    ("exponential", AnnealShape::Exponential),
                    ("cosine", AnnealShape::Cosine),
                ],
            )?,
        };
        let train = TrainConfig {
            lr_main: self.get_or("lr_main", t.lr_main)?,
            lr_logits: self.get_or("lr_logits", t.lr_logits)?,
            lr_min_ratio: self.get_or("lr_min_ratio", t.lr_min_ratio)?,
            betas: (self.get_or("beta1", t.betas.0)?, self.get_or("beta2", t.betas.1)?),
            weight_decay: self.get_or("weight_decay", t.weight_decay)?,
            steps: self.require("steps")?,
            batch: self.get_or("batch", t.batch)?,
            samples_per_seq: self.get_or("samples_per_seq", t.samples_per_seq)?,
            tau,
            seed: self.get_or("seed", t.seed)?,
            alpha: self.get_or("alpha", t.alpha)?,
            grad_clip: self.get_or("grad_clip", t.grad_clip)?,
            checkpoint_every: self.get_or("checkpoint_every", t.checkpoint_every)?,
        };
        train.validate()?;
        let a = SparsityAblationConfig::default();
        let ablation = SparsityAblationConfig {
            enabled: self.get_or("sparsity.enabled", a.enabled)?,
            k_target: self.get_or("sparsity.k_target", model.k)?,
            weight: self.get_or("sparsity.weight", a.weight)?,
        };
        Ok((model, train, ablation))
    }

    /// Predictor settings. `k`/`t` describe the tokenizer's keyframe density
    /// for the balanced class weights.
    pub fn pred_settings(
        &self,
        codebook_size: usize,
        speaker_dim: usize,
        audio: AudioInput,
        t: usize,
        k: usize,
    ) -> Result<(PredictorConfig, PredTrainConfig)> {
        self.check_pred_keys()?;
        let base = PredictorConfig::default();
        let model = PredictorConfig {
            codebook_size,
            speaker_dim,
            audio,
            dims: dims(self, "model", base.dims)?,
            dtw_weight: self.get_or("dtw_weight", base.dtw_weight)?,
            dtw_gamma: self.get_or("dtw_gamma", base.dtw_gamma)?,
        };
        model.validate()?;
        let classes = model.num_classes();
        let d = PredTrainConfig::for_vocabulary(classes, t, k);
        let mut weights = match self.raw("weights").unwrap_or("balanced") {
            "balanced" => ClassWeights::balanced(classes, t, k),
            "uniform" => ClassWeights::uniform(classes),
            other => return Err(Error::Config(format!("key `weights`: `{other}` is not one of balanced|uniform"))),
        };
        weights.w[0] = self.get_or("weight0", weights.w[0])?;
        let train = PredTrainConfig {
            lr: self.get_or("lr", d.lr)?,
            lr_min_ratio: self.get_or("lr_min_ratio", d.lr_min_ratio)?,
            betas: (self.get_or("beta1", d.betas.0)?, self.get_or("beta2", d.betas.1)?),
            weight_decay: self.get_or("weight_decay", d.weight_decay)?,
            steps: self.require("steps")?,
            batch: self.get_or("batch", d.batch)?,
            seed: self.get_or("seed", d.seed)?,
            grad_clip: self.get_or("grad_clip", d.grad_clip)?,
            augment_prob: self.get_or("augment.prob", d.augment_prob)?,
            augment_len: (self.get_or("augment.min", d.augment_len.0)?, self.get_or("augment.max", d.augment_len.1)?),
            weights: ClassWeights::new(weights.w)?,
            checkpoint_every: self.get_or("checkpoint_every", d.checkpoint_every)?,
        };
        train.validate(classes)?;
        Ok((model, train))
    }
}
