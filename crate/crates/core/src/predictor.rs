//! Autoregressive listener-token prediction from dyadic context.
//!
//! A window covers 48 frames: 40 past and 8 future. Listener tokens enter
//! shifted by one slot (slot 0 reads class 0), so the head output at slot
//! `p` predicts token `p` from tokens `< p`. Speaker motion and audio are
//! fused with a gated block, concatenated with the listener stream along
//! time and encoded under a time mask that lets slot `p` see only inputs at
//! times `<= p`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Graph, Var};
use crate::data::{AudioFeatures, DyadContext, MotionSequence, MEL_BINS, MEL_FRAMES_PER_VIDEO_FRAME};
use crate::error::{Error, Result};
use crate::inpainter::{decode_tokens, static_uniform_indices, Placement, ReconModel};
use crate::metrics::{soft_dtw_divergence, soft_dtw_divergence_grad};
use crate::nn::{sinusoidal_pe, time_mask, Conv1d, EncoderStack, GatedFusion, Linear, ModelDims, ParamStore};
use crate::quantizer::TokenSequence;
use crate::rng;
use crate::sampler::{hard_topk_mask, score_logits, KeyframeMask};
use crate::tensor::Mat;

pub const PAST: usize = 40;
pub const FUTURE: usize = 8;
pub const WINDOW: usize = PAST + FUTURE;
pub const AUDIO_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AudioInput {
    Mel,
    /// Discrete speech tokens with ids below `vocab`.
    Tokens { vocab: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Codebook size N; the predictor emits N + 1 classes.
    pub codebook_size: usize,
    pub speaker_dim: usize,
    pub audio: AudioInput,
    pub dims: ModelDims,
    pub dtw_weight: f64,
    pub dtw_gamma: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            codebook_size: 256,
            speaker_dim: 56,
            audio: AudioInput::Mel,
            dims: ModelDims::default(),
            dtw_weight: 0.1,
            dtw_gamma: 0.1,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.codebook_size == 0 || self.speaker_dim == 0 {
            return Err(Error::validation("codebook_size and speaker_dim must be positive"));
        }
        if let AudioInput::Tokens { vocab: 0 } = self.audio {
            return Err(Error::validation("audio token vocabulary must be non-empty"));
        }
        if !(self.dtw_weight >= 0.0 && self.dtw_gamma > 0.0) {
            return Err(Error::validation("dtw_weight must be >= 0 and dtw_gamma > 0"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.codebook_size + 1
    }
}

/// One 48-frame window. `listener[PAST..]` holds the targets during
/// training; at inference only entries before the queried slot matter.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorBatch {
    pub listener: Vec<u32>,
    pub speaker: Mat,
    pub audio: AudioFeatures,
}

impl PredictorBatch {
    pub fn target(&self) -> &[u32] {
        &self.listener[PAST..]
    }

    pub fn validate(&self, cfg: &PredictorConfig) -> Result<()> {
        if self.listener.len() != WINDOW {
            return Err(Error::dim(format!("{} listener tokens, expected {WINDOW}", self.listener.len())));
        }
        if let Some(&c) = self.listener.iter().find(|&&c| c as usize > cfg.codebook_size) {
            return Err(Error::validation(format!("listener class {c} exceeds {}", cfg.codebook_size)));
        }
        if self.speaker.shape() != (WINDOW, cfg.speaker_dim) {
            return Err(Error::dim(format!(
                "speaker window {:?}, expected ({WINDOW}, {})",
                self.speaker.shape(),
                cfg.speaker_dim
            )));
        }
        match (&self.audio, cfg.audio) {
            (AudioFeatures::Mel(_), AudioInput::Mel) | (AudioFeatures::Tokens(_), AudioInput::Tokens { .. }) => {
                self.audio.validate_for(WINDOW)
            }
            _ => Err(Error::validation("audio kind does not match the predictor")),
        }
    }
}

/// Per-class loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: Vec<f64>,
}

impl ClassWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::validation("class weights must be finite and non-negative"));
        }
        Ok(ClassWeights { w })
    }

    pub fn uniform(classes: usize) -> Self {
        ClassWeights { w: vec![1.0; classes] }
    }

    /// Inverse-frequency balancing for K keyframes in T frames: transitions
    /// weigh 1, each keyframe class T/K.
    pub fn balanced(classes: usize, t: usize, k: usize) -> Self {
        let wk = t as f64 / k.max(1) as f64;
        let mut w = vec![wk; classes];
        w[0] = 1.0;
        ClassWeights { w }
    }
}

fn check_targets(logits: (usize, usize), target: &[u32], weights: &ClassWeights) -> Result<()> {
    if logits.0 != target.len() {
        return Err(Error::dim(format!("{} logit rows for {} targets", logits.0, target.len())));
    }
    if weights.w.len() != logits.1 {
        return Err(Error::dim(format!("{} weights for {} classes", weights.w.len(), logits.1)));
    }
    if target.iter().any(|&c| c as usize >= logits.1) {
        return Err(Error::validation("target class out of range"));
    }
    Ok(())
}

fn indicator(target: &[u32]) -> Mat {
    Mat::col_vector(&target.iter().map(|&c| (c > 0) as u8 as f64).collect::<Vec<_>>())
}

/// Weighted cross-entropy averaged over frames plus `dtw_weight` times the
/// soft-DTW divergence between `P(class > 0)` and the target indicator.
pub fn prediction_loss(
    logits: &Mat,
    target: &[u32],
    weights: &ClassWeights,
    dtw_weight: f64,
    gamma: f64,
) -> Result<f64> {
    check_targets(logits.shape(), target, weights)?;
    let t = target.len() as f64;
    let mut ce = 0.0;
    for (r, &c) in target.iter().enumerate() {
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        ce += weights.w[c as usize] * (lse - row[c as usize]);
    }
    let mut loss = ce / t;
    if dtw_weight > 0.0 {
        let p = softmax_rows(logits);
        let key = Mat::from_fn(p.rows(), 1, |r, _| 1.0 - p.get(r, 0));
        loss += dtw_weight * soft_dtw_divergence(&key, &indicator(target), gamma)?;
    }
    Ok(loss)
}

/// Graph form of [`prediction_loss`]; returns `(total, ce, dtw)`.
pub fn prediction_loss_graph(
    g: &mut Graph,
    logits: Var,
    target: &[u32],
    weights: &ClassWeights,
    dtw_weight: f64,
    gamma: f64,
) -> Result<(Var, Var, Option<Var>)> {
    let shape = g.shape(logits);
    check_targets(shape, target, weights)?;
    let logp = g.log_softmax_rows(logits);
    let sel = Mat::from_fn(shape.0, shape.1, |r, c| {
        if c == target[r] as usize {
            -weights.w[c] / target.len() as f64
        } else {
            0.0
        }
    });
    let sel = g.constant(sel);
    let picked = g.mul(logp, sel);
    let ce = g.sum_all(picked);
    if dtw_weight <= 0.0 {
        return Ok((ce, ce, None));
    }
    let p = g.softmax_rows(logits);
    let p0 = g.slice_cols(p, 0, 1);
    let neg = g.scale(p0, -1.0);
    let key = g.add_scalar(neg, 1.0);
    let (v, grad) = soft_dtw_divergence_grad(g.value(key), &indicator(target), gamma)?;
    let dtw = g.custom_scalar(v, vec![(key, grad)]);
    let wd = g.scale(dtw, dtw_weight);
    let total = g.add(ce, wd);
    Ok((total, ce, Some(dtw)))
}

#[derive(Debug, Clone)]
pub struct Predictor {
    pub config: PredictorConfig,
    speaker_in: Linear,
    audio_conv: Conv1d,
    fusion: GatedFusion,
    encoder: EncoderStack,
    head: Linear,
}

const LISTENER_EMB: &str = "pred.listener_emb";
const AUDIO_EMB: &str = "pred.audio_emb";
const MODALITY: &str = "pred.modality";

impl Predictor {
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dims.model_dim;
        Ok(Predictor {
            speaker_in: Linear::new("pred.speaker_in", config.speaker_dim, d),
            audio_conv: Conv1d::new("pred.audio_conv", MEL_BINS, d, AUDIO_KERNEL),
            fusion: GatedFusion::new("pred.fusion", &config.dims),
            encoder: EncoderStack::new("pred.enc", config.dims),
            head: Linear::new("pred.head", d, config.num_classes()),
            config,
        })
    }

    pub fn fusion_alpha_name(&self) -> String {
        self.fusion.alpha_name()
    }

    pub fn init(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, "pred-init", 0);
        let d = self.config.dims.model_dim;
        store.init_xavier(LISTENER_EMB, self.config.num_classes(), d, &mut r);
        self.speaker_in.init(&mut store, &mut r);
        match self.config.audio {
            AudioInput::Mel => self.audio_conv.init(&mut store, &mut r),
            AudioInput::Tokens { vocab } => store.init_xavier(AUDIO_EMB, vocab, d, &mut r),
        }
        self.fusion.init(&mut store, &mut r);
        store.init_uniform(MODALITY, 2, d, 0.02, &mut r);
        self.encoder.init(&mut store, &mut r);
        self.head.init(&mut store, &mut r);
        store
    }

    /// Mel frames (4T × 128) to T × D: causal convolution over time, then
    /// max-pool with stride 4.
    pub fn encode_audio_mel(&self, g: &mut Graph, store: &ParamStore, mel: Var) -> Result<Var> {
        let (rows, cols) = g.shape(mel);
        if rows == 0 || rows % MEL_FRAMES_PER_VIDEO_FRAME != 0 {
            return Err(Error::dim(format!("{rows} mel rows not divisible by {MEL_FRAMES_PER_VIDEO_FRAME}")));
        }
        if cols != MEL_BINS {
            return Err(Error::dim(format!("{cols} mel bins, expected {MEL_BINS}")));
        }
        let h = self.audio_conv.forward_causal(g, store, mel)?;
        Ok(g.max_pool_rows(h, MEL_FRAMES_PER_VIDEO_FRAME))
    }

    /// Speech tokens to T × D: embedding plus position code, resampled to
    /// `t` rows by nearest rate.
    pub fn encode_audio_tokens(&self, g: &mut Graph, store: &ParamStore, tokens: &[u32], t: usize) -> Result<Var> {
        let AudioInput::Tokens { vocab } = self.config.audio else {
            return Err(Error::validation("predictor is configured for mel audio"));
        };
        if tokens.is_empty() || t == 0 {
            return Err(Error::validation("empty audio token stream"));
        }
        if let Some(&bad) = tokens.iter().find(|&&c| c as usize >= vocab) {
            return Err(Error::validation(format!("audio token {bad} outside vocabulary {vocab}")));
        }
        let n = tokens.len();
        let src: Vec<usize> = (0..t).map(|i| (((2 * i + 1) * n) / (2 * t)).min(n - 1)).collect();
        let ids: Vec<usize> = src.iter().map(|&s| tokens[s] as usize).collect();
        let table = store.var(g, AUDIO_EMB);
        let e = g.gather_rows(table, &ids);
        let pe = g.constant(sinusoidal_pe(&src, self.config.dims.model_dim)?);
        Ok(g.add(e, pe))
    }

    /// Listener input embeddings for a full window (shifted by one slot).
    pub fn listener_inputs(&self, g: &mut Graph, store: &ParamStore, listener: &[u32]) -> Var {
        let mut ids = vec![0usize; listener.len()];
        for p in 1..listener.len() {
            ids[p] = listener[p - 1] as usize;
        }
        let table = store.var(g, LISTENER_EMB);
        g.gather_rows(table, &ids)
    }

    /// Future-slot logits from precomputed listener input embeddings
    /// (WINDOW × D); lets callers perturb the embeddings directly.
    pub fn logits_from_inputs(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        listener_in: Var,
        batch: &PredictorBatch,
    ) -> Result<Var> {
        let d = self.config.dims.model_dim;
        if g.shape(listener_in) != (WINDOW, d) {
            return Err(Error::dim(format!("listener inputs {:?}", g.shape(listener_in))));
        }
        let times: Vec<usize> = (0..WINDOW).collect();
        let pe = sinusoidal_pe(&times, d)?;
        let causal = time_mask(&times, &times);

        let spk = g.constant(batch.speaker.clone());
        let sv = self.speaker_in.forward(g, store, spk);
        let pe_v = g.constant(pe.clone());
        let sv = g.add(sv, pe_v);
        let audio = match &batch.audio {
            AudioFeatures::Mel(m) => {
                let mel = g.constant(m.clone());
                self.encode_audio_mel(g, store, mel)?
            }
            AudioFeatures::Tokens(t) => self.encode_audio_tokens(g, store, t, WINDOW)?,
        };
        let fused = self.fusion.forward(g, store, sv, audio, Some(&causal), Some(&causal))?;

        let modality = store.var(g, MODALITY);
        let m_l = g.slice_rows(modality, 0, 1);
        let m_s = g.slice_rows(modality, 1, 1);
        let pe_l = g.constant(pe.clone());
        let lis = g.add(listener_in, pe_l);
        let lis = g.add_row(lis, m_l);
        let pe_s = g.constant(pe);
        let sp = g.add(fused, pe_s);
        let sp = g.add_row(sp, m_s);
        let seq = g.concat_rows(&[lis, sp]);
        let all_times: Vec<usize> = times.iter().chain(&times).copied().collect();
        let mask = time_mask(&all_times, &all_times);
        let h = self.encoder.forward(g, store, seq, Some(&mask))?;
        let fut = g.slice_rows(h, PAST, FUTURE);
        Ok(self.head.forward(g, store, fut))
    }

    /// FUTURE × (N+1) class logits.
    pub fn predict_logits_graph(&self, g: &mut Graph, store: &ParamStore, batch: &PredictorBatch) -> Result<Var> {
        batch.validate(&self.config)?;
        let lis = self.listener_inputs(g, store, &batch.listener);
        self.logits_from_inputs(g, store, lis, batch)
    }

    pub fn predict_logits(&self, store: &ParamStore, batch: &PredictorBatch) -> Result<Mat> {
        let mut g = Graph::new();
        let l = self.predict_logits_graph(&mut g, store, batch)?;
        Ok(g.value(l).clone())
    }
}

/// Keyframe placement for a whole listener track: K scales with length so
/// the keyframe density matches the reconstruction window.
pub fn listener_mask(model: &ReconModel, store: &ParamStore, seq: &MotionSequence) -> Result<KeyframeMask> {
    let t = seq.len();
    let cfg = &model.config;
    let k = ((t as f64 * cfg.k as f64 / cfg.frames as f64).round() as usize).clamp(1, t);
    match cfg.placement {
        Placement::Dynamic => hard_topk_mask(&score_logits(seq, &model.scorer, store)?, k),
        Placement::Static => KeyframeMask::from_indices(t, &static_uniform_indices(t, k)),
    }
}

/// Token track of a full listener sequence.
pub fn tokenize_listener(model: &ReconModel, store: &ParamStore, seq: &MotionSequence) -> Result<TokenSequence> {
    let mask = listener_mask(model, store, seq)?;
    crate::inpainter::tokenize(model, store, seq, &mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RolloutMode {
    Greedy,
    Sample { temperature: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Generated classes only (length = horizon).
    pub tokens: TokenSequence,
    /// Decoded motion for the generated frames.
    pub motion: MotionSequence,
}

fn argmax_low(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_row(row: &[f64], temperature: f64, r: &mut rng::Rng) -> usize {
    let scaled: Vec<f64> = row.iter().map(|v| v / temperature).collect();
    let p = softmax_rows(&Mat::row_vector(&scaled));
    let mut u: f64 = r.gen();
    for (i, &pi) in p.data().iter().enumerate() {
        if u < pi {
            return i;
        }
        u -= pi;
    }
    argmax_low(row)
}

/// Audio for padded timeline frames `start..start+len`; frames before the
/// real start (negative) or past the end are silent.
fn padded_audio(audio: &AudioFeatures, frames: usize, pad: usize, start: usize, len: usize) -> AudioFeatures {
    match audio {
        AudioFeatures::Mel(m) => {
            let per = MEL_FRAMES_PER_VIDEO_FRAME;
            let out = Mat::from_fn(len * per, m.cols(), |r, c| {
                let f = start + r / per;
                if f < pad || f - pad >= frames {
                    0.0
                } else {
                    m.get((f - pad) * per + r % per, c)
                }
            });
            AudioFeatures::Mel(out)
        }
        AudioFeatures::Tokens(t) => {
            let rate = (t.len() as f64 / frames as f64).max(1.0 / frames as f64);
            let per = rate.round().max(1.0) as usize;
            let out = (0..len * per)
                .map(|i| {
                    let f = start + i / per;
                    if f < pad || f - pad >= frames {
                        0
                    } else {
                        let src = (((f - pad) as f64 + (i % per) as f64 / per as f64) * rate) as usize;
                        t[src.min(t.len() - 1)]
                    }
                })
                .collect();
            AudioFeatures::Tokens(out)
        }
    }
}

fn padded_rows(m: &Mat, pad: usize, start: usize, len: usize) -> Mat {
    Mat::from_fn(len, m.cols(), |r, c| {
        let f = start + r;
        if f < pad || f - pad >= m.rows() {
            0.0
        } else {
            m.get(f - pad, c)
        }
    })
}

/// Training/inference window ending at padded timeline frame
/// `start + WINDOW`.
pub fn window_batch(context: &DyadContext, listener: &[u32], pad: usize, start: usize) -> PredictorBatch {
    PredictorBatch {
        listener: (start..start + WINDOW)
            .map(|f| if f < pad { 0 } else { listener.get(f - pad).copied().unwrap_or(0) })
            .collect(),
        speaker: padded_rows(&context.speaker.frames, pad, start, WINDOW),
        audio: padded_audio(&context.audio, context.len(), pad, start, WINDOW),
    }
}

/// Autoregressive generation of `horizon` listener frames after the first
/// `prefix.len()` frames of `context`. Prefixes shorter than the past
/// window are padded with neutral frames. Motion is decoded chunk by chunk
/// by re-inpainting the trailing window.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    pred: &Predictor,
    store: &ParamStore,
    recon: &ReconModel,
    recon_store: &ParamStore,
    context: &DyadContext,
    prefix: &[u32],
    horizon: usize,
    mode: RolloutMode,
    seed: u64,
) -> Result<Rollout> {
    if horizon == 0 {
        return Err(Error::validation("horizon must be positive"));
    }
    if prefix.is_empty() {
        return Err(Error::validation("rollout needs at least one prefix frame"));
    }
    if let RolloutMode::Sample { temperature } = mode {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::validation("sampling temperature must be positive"));
        }
    }
    if recon.config.codebook_size() != pred.config.codebook_size {
        return Err(Error::validation("predictor and tokenizer vocabularies differ"));
    }
    if context.speaker.dims() != pred.config.speaker_dim {
        return Err(Error::dim(format!(
            "speaker has {} channels, predictor expects {}",
            context.speaker.dims(),
            pred.config.speaker_dim
        )));
    }
    let pad = PAST.saturating_sub(prefix.len());
    let mut tokens: Vec<u32> = prefix.to_vec();
    let mut r = rng::stream(seed, "rollout", 0);
    let fps = context.listener.fps;
    let d = recon.config.input_dim;
    let mut motion = Mat::zeros(0, d);
    let window_frames = recon.config.frames;
    while tokens.len() < prefix.len() + horizon {
        let start = tokens.len() + pad - PAST;
        let chunk = FUTURE.min(prefix.len() + horizon - tokens.len());
        for j in 0..chunk {
            let batch = window_batch(context, &tokens, pad, start);
            let logits = pred.predict_logits(store, &batch)?;
            let row = logits.row(j);
            let c = match mode {
                RolloutMode::Greedy => argmax_low(row),
                RolloutMode::Sample { temperature } => sample_row(row, temperature, &mut r),
            };
            tokens.push(c as u32);
        }
        let end = tokens.len();
        let from = end.saturating_sub(window_frames);
        let window = TokenSequence::new(tokens[from..end].to_vec(), recon.config.codebook, recon.config.codebook_size())?;
        let decoded = decode_tokens(recon, recon_store, &window, fps)?;
        let tail = decoded.frames.slice_rows(decoded.len() - chunk, chunk);
        motion = Mat::concat_rows(&[&motion, &tail]);
    }
    if !motion.is_finite() {
        return Err(Error::Numerical {
            message: "non-finite rollout motion".into(),
            dump: None,
        });
    }
    let generated = tokens[prefix.len()..].to_vec();
    Ok(Rollout {
        tokens: TokenSequence::new(generated, recon.config.codebook, recon.config.codebook_size())?,
        motion: MotionSequence::new(motion, fps, crate::data::SchemaId::Generic)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = Mat::zeros(8, 5);
        let l = prediction_loss(&logits, &[0, 1, 2, 3, 4, 0, 0, 1], &ClassWeights::uniform(5), 0.0, 0.1).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_cost_nothing() {
        let target = [0u32, 2, 0, 1];
        let logits = Mat::from_fn(4, 3, |r, c| if c == target[r] as usize { 800.0 } else { 0.0 });
        let l = prediction_loss(&logits, &target, &ClassWeights::uniform(3), 0.0, 0.1).unwrap();
        assert_eq!(l, 0.0);
        let with_dtw = prediction_loss(&logits, &target, &ClassWeights::uniform(3), 1.0, 0.1).unwrap();
        assert!(with_dtw.abs() < 1e-12);
    }

    #[test]
    fn balanced_weights() {
        let w = ClassWeights::balanced(4, 48, 6);
        assert_eq!(w.w, vec![1.0, 8.0, 8.0, 8.0]);
    }

    #[test]
    fn audio_tokens_resample_to_rows() {
        let cfg = PredictorConfig {
            codebook_size: 4,
            speaker_dim: 3,
            audio: AudioInput::Tokens { vocab: 5 },
            dims: ModelDims {
                model_dim: 8,
                heads: 2,
                layers: 1,
                ffn_dim: 16,
            },
            ..Default::default()
        };
        let p = Predictor::new(cfg).unwrap();
        let store = p.init(1);
        let mut g = Graph::new();
        let v = p.encode_audio_tokens(&mut g, &store, &[3; 17], 6).unwrap();
        assert_eq!(g.shape(v), (6, 8));
        let mut g2 = Graph::new();
        assert!(p.encode_audio_tokens(&mut g2, &store, &[], 6).is_err());
        assert!(p.encode_audio_tokens(&mut g2, &store, &[5], 6).is_err());
    }
}
