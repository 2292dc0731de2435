use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::recon::{TrainCheckpoint, TrainOptions, FINAL_CHECKPOINT, NAN_DUMP};
use crate::autodiff::Graph;
use crate::data::{AudioFeatures, DyadContext, MEL_FRAMES_PER_VIDEO_FRAME};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, cosine_lr, AdamW, AdamWConfig, ParamStore};
use crate::predictor::{prediction_loss_graph, window_batch, ClassWeights, Predictor, PredictorBatch, WINDOW};
use crate::quantizer::TokenSequence;
use crate::rng;

/// A training window with its source for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainWindow {
    pub dyad: usize,
    pub start: usize,
    pub batch: PredictorBatch,
}

/// 48-frame windows every `stride` frames over each dyad's token track.
pub fn extract_windows(dyads: &[(DyadContext, TokenSequence)], stride: usize) -> Result<Vec<TrainWindow>> {
    if stride == 0 {
        return Err(Error::validation("window stride must be positive"));
    }
    let mut out = Vec::new();
    for (i, (ctx, tokens)) in dyads.iter().enumerate() {
        if tokens.length != ctx.len() {
            return Err(Error::dim(format!(
                "dyad {i}: {} tokens for {} frames",
                tokens.length,
                ctx.len()
            )));
        }
        if ctx.len() < WINDOW {
            continue;
        }
        for start in (0..=ctx.len() - WINDOW).step_by(stride) {
            out.push(TrainWindow {
                dyad: i,
                start,
                batch: window_batch(ctx, &tokens.classes, 0, start),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredTrainConfig {
    pub lr: f64,
    pub lr_min_ratio: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub grad_clip: f64,
    /// Fraction of windows whose start is replaced by a neutral prefix.
    pub augment_prob: f64,
    pub augment_len: (usize, usize),
    pub weights: ClassWeights,
    pub checkpoint_every: usize,
}

impl PredTrainConfig {
    /// Defaults for a vocabulary of `classes` with K keyframes per T frames.
    pub fn for_vocabulary(classes: usize, t: usize, k: usize) -> Self {
        PredTrainConfig {
            lr: 1e-3,
            lr_min_ratio: 0.05,
            betas: (0.9, 0.98),
            weight_decay: 0.01,
            steps: 2000,
            batch: 8,
            seed: 0,
            grad_clip: 1.0,
            augment_prob: 0.25,
            augment_len: (4, 16),
            weights: ClassWeights::balanced(classes, t, k),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..=1.0).contains(&self.lr_min_ratio) {
            return Err(Error::validation("bad learning-rate settings"));
        }
        if self.batch == 0 || self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return Err(Error::validation("batch and grad_clip must be positive"));
        }
        if !(0.0..=1.0).contains(&self.augment_prob) || self.augment_len.0 > self.augment_len.1 {
            return Err(Error::validation("bad augmentation settings"));
        }
        if self.augment_len.1 >= crate::predictor::PAST {
            return Err(Error::validation("neutral prefix must be shorter than the past window"));
        }
        if self.weights.w.len() != classes {
            return Err(Error::validation(format!(
                "{} class weights for {classes} classes",
                self.weights.w.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredStepLog {
    pub step: usize,
    pub loss: f64,
    pub ce: f64,
    pub dtw: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

impl PredStepLog {
    pub const CSV_HEADER: [&'static str; 6] = ["step", "loss", "ce", "dtw", "lr", "grad_norm"];

    pub fn csv_record(&self) -> Vec<String> {
        let mut v = vec![self.step.to_string()];
        for x in [self.loss, self.ce, self.dtw, self.lr, self.grad_norm] {
            v.push(format!("{x:?}"));
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct PredTrainOutcome {
    pub checkpoint: TrainCheckpoint,
    pub log: Vec<PredStepLog>,
}

impl PredTrainOutcome {
    pub fn params(&self) -> &ParamStore {
        &self.checkpoint.params
    }
}

pub const PRED_LOG_FILE: &str = "pred_log.csv";

/// Silence the first `len` frames of a window, as at the start of a
/// conversation.
fn neutral_prefix(b: &PredictorBatch, len: usize) -> PredictorBatch {
    let mut out = b.clone();
    for c in out.listener.iter_mut().take(len) {
        *c = 0;
    }
    for t in 0..len {
        out.speaker.row_mut(t).fill(0.0);
    }
    out.audio = match &b.audio {
        AudioFeatures::Mel(m) => {
            let mut m = m.clone();
            for r in 0..len * MEL_FRAMES_PER_VIDEO_FRAME {
                m.row_mut(r).fill(0.0);
            }
            AudioFeatures::Mel(m)
        }
        AudioFeatures::Tokens(t) => {
            let cut = (t.len() * len).div_ceil(WINDOW);
            AudioFeatures::Tokens(t.iter().enumerate().map(|(i, &c)| if i < cut { 0 } else { c }).collect())
        }
    };
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Write {
        path: path.to_path_buf(),
        source,
    }
}

/// Teacher-forced training on windows; batch picks and augmentation draw
/// from per-step streams of `cfg.seed`.
pub fn train_predictor(
    pred: &Predictor,
    windows: &[TrainWindow],
    cfg: &PredTrainConfig,
    opts: TrainOptions,
) -> Result<PredTrainOutcome> {
    cfg.validate(pred.config.num_classes())?;
    if windows.is_empty() {
        return Err(Error::validation("no training windows"));
    }
    for w in windows {
        w.batch.validate(&pred.config)?;
    }
    let adam = AdamWConfig {
        beta1: cfg.betas.0,
        beta2: cfg.betas.1,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let mut opt = AdamW::new(adam);
    let (mut store, start) = match &opts.resume {
        Some(ck) => {
            opt.load_state("", &ck.main);
            (ck.params.clone(), ck.step)
        }
        None => (pred.init(rng::derive(cfg.seed, "init", 0)), 0),
    };
    let end = opts.stop_after.map_or(cfg.steps, |s| s.min(cfg.steps));
    let mut writer = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(PRED_LOG_FILE);
            let append = start > 0 && path.exists();
            let file = fs::OpenOptions::new()
                .create(true)
                .append(append)
                .write(true)
                .truncate(!append)
                .open(&path)
                .map_err(io_err(&path))?;
            let mut w = csv::Writer::from_writer(file);
            if !append {
                w.write_record(PredStepLog::CSV_HEADER).map_err(|e| Error::Config(e.to_string()))?;
            }
            Some(w)
        }
        None => None,
    };
    let dtw_w = pred.config.dtw_weight;
    let gamma = pred.config.dtw_gamma;
    let mut log = Vec::new();
    for step in start..end {
        let mut r = rng::stream(cfg.seed, "pred-batch", step as u64);
        let mut g = Graph::new();
        let mut totals = Vec::new();
        let mut ces = Vec::new();
        let mut dtws = Vec::new();
        let mut picks = Vec::new();
        for _ in 0..cfg.batch {
            let i = r.gen_range(0..windows.len());
            picks.push(i);
            let aug = r.gen::<f64>() < cfg.augment_prob;
            let len = r.gen_range(cfg.augment_len.0..=cfg.augment_len.1);
            let b = if aug { neutral_prefix(&windows[i].batch, len) } else { windows[i].batch.clone() };
            let logits = pred.predict_logits_graph(&mut g, &store, &b)?;
            let (total, ce, dtw) = prediction_loss_graph(&mut g, logits, b.target(), &cfg.weights, dtw_w, gamma)?;
            totals.push(total);
            ces.push(ce);
            if let Some(d) = dtw {
                dtws.push(d);
            }
        }
        let mean = |g: &mut Graph, v: &[crate::autodiff::Var]| {
            let c = g.concat_cols(v);
            g.mean_all(c)
        };
        let loss = mean(&mut g, &totals);
        let ce = mean(&mut g, &ces);
        let dtw = if dtws.is_empty() {
            0.0
        } else {
            let m = mean(&mut g, &dtws);
            g.value(m).scalar_value()
        };
        let loss_v = g.value(loss).scalar_value();
        if !loss_v.is_finite() {
            let dump = opts.out_dir.as_ref().map(|d| d.join(NAN_DUMP));
            if let Some(p) = &dump {
                let body = serde_json::json!({ "step": step, "windows": picks, "loss": format!("{loss_v:?}") });
                fs::write(p, serde_json::to_string(&body)?).map_err(io_err(p))?;
            }
            return Err(Error::Numerical {
                message: format!("non-finite predictor loss at step {step}"),
                dump,
            });
        }
        let grads = g.backward(loss);
        let mut pg = g.param_grads(&grads);
        let grad_norm = clip_grad_norm(&mut pg, cfg.grad_clip);
        let lr = cosine_lr(cfg.lr, cfg.lr * cfg.lr_min_ratio, step, cfg.steps);
        opt.step(&mut store, &pg, lr, |_| true);
        let bad = store.non_finite();
        if !bad.is_empty() {
            let dump = opts.out_dir.as_ref().map(|d| d.join(NAN_DUMP));
            if let Some(p) = &dump {
                let body = serde_json::json!({ "step": step, "windows": picks, "non_finite_params": bad });
                fs::write(p, serde_json::to_string(&body)?).map_err(io_err(p))?;
            }
            return Err(Error::Numerical {
                message: format!("parameters diverged at step {step}: {}", bad.join(", ")),
                dump,
            });
        }
        let entry = PredStepLog {
            step,
            loss: loss_v,
            ce: g.value(ce).scalar_value(),
            dtw,
            lr,
            grad_norm,
        };
        if let Some(w) = writer.as_mut() {
            w.write_record(entry.csv_record()).map_err(|e| Error::Config(e.to_string()))?;
        }
        log::debug!("pred step {step} loss {loss_v:.6}");
        log.push(entry);
        let done = step + 1;
        if let (Some(dir), true) = (&opts.out_dir, cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
            let ck = TrainCheckpoint {
                step: done,
                params: store.clone(),
                main: opt.state(""),
                logits: Default::default(),
            };
            ck.write(&dir.join(format!("pred_ckpt_{done:06}.sfck")))?;
        }
    }
    if let Some(w) = writer.as_mut() {
        w.flush().map_err(Error::Io)?;
    }
    let checkpoint = TrainCheckpoint {
        step: end.max(start),
        params: store,
        main: opt.state(""),
        logits: Default::default(),
    };
    if let Some(dir) = &opts.out_dir {
        checkpoint.write(&dir.join(format!("pred_{FINAL_CHECKPOINT}")))?;
        let cfg_path = dir.join("pred_config.json");
        let body = serde_json::json!({ "model": pred.config, "train": cfg });
        fs::write(&cfg_path, serde_json::to_string_pretty(&body)?).map_err(io_err(&cfg_path))?;
    }
    Ok(PredTrainOutcome { checkpoint, log })
}
