//! Sparse-to-dense reconstruction.
//!
//! ```text
//! frames[I] ─ Linear ─ encoder (no position code) ─ quantize ─ × r[I] ─► z_kf
//! [PE(t_tf) | mean(z_kf)] ─ Linear ─► query ─┐
//! [z_kf | PE(t_kf)] ─ Linear ─► memory ──────┴ cross-attn + FFN ─► z_tf
//! interleave(z_kf, z_tf) by frame ─ [· | PE(t)] ─ Linear ─ encoder ─ head ─► T×d
//! ```
//!
//! `r` is the straight-through keyframe mask: exactly 1 in the forward pass,
//! it carries the reconstruction gradient back to the scorer.
//!
//! The dense baseline quantizes every frame independently and decodes with a
//! temporal encoder.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::MotionSequence;
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_pe, Attention, EncoderStack, FeedForward, LayerNorm, Linear, ModelDims, ParamStore};
use crate::quantizer::{fsq_graph, vq_graph, Codebook, CodebookKind, TokenSequence, DEFAULT_FSQ_LEVELS};
use crate::rng;
use crate::sampler::{hard_topk_mask, score_logits, KeyframeMask, LogitsEncoder};
use crate::tensor::Mat;

pub const SCORER_PREFIX: &str = "scorer.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Learned scorer + relaxed top-k.
    Dynamic,
    /// Fixed, evenly spaced keyframes.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Sparse,
    /// Per-frame quantization baseline.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub input_dim: usize,
    pub frames: usize,
    pub k: usize,
    pub dims: ModelDims,
    pub scorer_dims: ModelDims,
    pub codebook: CodebookKind,
    pub fsq_levels: Vec<usize>,
    pub vq_size: usize,
    pub placement: Placement,
    pub architecture: Architecture,
    /// Position codes in the transition encoder; off for the ablation.
    pub transition_pe: bool,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            input_dim: 56,
            frames: 48,
            k: 7,
            dims: ModelDims::default(),
            scorer_dims: ModelDims::default(),
            codebook: CodebookKind::Fsq,
            fsq_levels: DEFAULT_FSQ_LEVELS.to_vec(),
            vq_size: 256,
            placement: Placement::Dynamic,
            architecture: Architecture::Sparse,
            transition_pe: true,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.scorer_dims.validate()?;
        if self.input_dim == 0 || self.frames == 0 {
            return Err(Error::validation("input_dim and frames must be positive"));
        }
        if self.architecture == Architecture::Sparse && (self.k == 0 || self.k > self.frames) {
            return Err(Error::validation(format!("K = {} outside 1..={}", self.k, self.frames)));
        }
        self.codebook()?;
        Ok(())
    }

    /// Codebook size exposed as the token vocabulary (classes 1..=size).
    pub fn codebook_size(&self) -> usize {
        match self.codebook {
            CodebookKind::Vq => self.vq_size,
            CodebookKind::Fsq => self.fsq_levels.iter().product(),
        }
    }

    /// Book used for shape checks; VQ entries live in the parameter store.
    fn codebook(&self) -> Result<Codebook> {
        match self.codebook {
            CodebookKind::Fsq => Codebook::fsq(self.fsq_levels.clone()),
            CodebookKind::Vq => Codebook::vq(Mat::zeros(self.vq_size.max(1), self.dims.model_dim)),
        }
    }
}

/// Evenly spaced keyframes: `floor((i + 1/2) T / K)`.
pub fn static_uniform_indices(t: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| ((2 * i + 1) * t) / (2 * k)).collect()
}

/// Keyframe latents plus the position split.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLatent {
    pub z_kf: Mat,
    pub t_kf: Vec<usize>,
    pub t_tf: Vec<usize>,
    pub codes: Vec<usize>,
}

impl SparseLatent {
    pub fn frames(&self) -> usize {
        self.t_kf.len() + self.t_tf.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_kf.is_empty() {
            return Err(Error::validation("latent needs at least one keyframe"));
        }
        if self.z_kf.rows() != self.t_kf.len() {
            return Err(Error::dim(format!(
                "{} keyframe rows for {} positions",
                self.z_kf.rows(),
                self.t_kf.len()
            )));
        }
        interleave_order(&self.t_kf, &self.t_tf).map(|_| ())
    }
}

/// Row order that maps `concat(kf rows, tf rows)` to frame order. Fails unless
/// the two position lists partition `0..T`.
pub fn interleave_order(t_kf: &[usize], t_tf: &[usize]) -> Result<Vec<usize>> {
    let t = t_kf.len() + t_tf.len();
    let mut order = vec![usize::MAX; t];
    for (row, &p) in t_kf.iter().chain(t_tf).enumerate() {
        if p >= t {
            return Err(Error::validation(format!("position {p} outside 0..{t}")));
        }
        if order[p] != usize::MAX {
            return Err(Error::validation(format!("position {p} appears twice")));
        }
        order[p] = row;
    }
    Ok(order)
}

fn complement(t: usize, idx: &[usize]) -> Vec<usize> {
    (0..t).filter(|p| !idx.contains(p)).collect()
}

/// Graph outputs of one reconstruction.
#[derive(Debug, Clone)]
pub struct ReconForward {
    pub recon: Var,
    pub codes: Vec<usize>,
    pub indices: Vec<usize>,
    pub codebook_loss: Option<Var>,
    pub commit_loss: Option<Var>,
    /// Head-averaged first-layer transition attention, (T−K)×K.
    pub transition_attention: Option<Mat>,
}

struct TransitionLayer {
    attn: Attention,
    ffn: FeedForward,
    ln_q: LayerNorm,
    ln_mem: LayerNorm,
    ln_ffn: LayerNorm,
}

pub struct ReconModel {
    pub config: ReconConfig,
    pub scorer: LogitsEncoder,
    kf_in: Linear,
    kf_enc: EncoderStack,
    fsq_in: Linear,
    fsq_out: Linear,
    tf_query: Linear,
    tf_memory: Linear,
    tf_layers: Vec<TransitionLayer>,
    dense_in: Linear,
    dense_ffn: FeedForward,
    dense_ln: LayerNorm,
    dec_in: Linear,
    dec_enc: EncoderStack,
    dec_head: Linear,
}

impl std::fmt::Debug for ReconModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReconModel").field("config", &self.config).finish()
    }
}

const CODEBOOK_PARAM: &str = "kf.codebook";

/// Quantized rows, code ids, and the VQ codebook and commitment terms.
type QuantizedRows = (Var, Vec<usize>, Option<Var>, Option<Var>);

impl ReconModel {
    pub fn new(config: ReconConfig) -> Result<Self> {
        config.validate()?;
        let d = config.input_dim;
        let dm = config.dims.model_dim;
        let c = config.fsq_levels.len();
        let tf_layers = (0..config.dims.layers.max(1))
            .map(|i| TransitionLayer {
                attn: Attention::new(format!("tf.l{i}.attn"), dm, config.dims.heads),
                ffn: FeedForward::new(format!("tf.l{i}.ffn"), dm, config.dims.ffn_dim),
                ln_q: LayerNorm::new(format!("tf.l{i}.ln_q"), dm),
                ln_mem: LayerNorm::new(format!("tf.l{i}.ln_mem"), dm),
                ln_ffn: LayerNorm::new(format!("tf.l{i}.ln_ffn"), dm),
            })
            .collect();
        Ok(ReconModel {
            scorer: LogitsEncoder::new("scorer", d, config.scorer_dims),
            kf_in: Linear::new("kf.in", d, dm),
            kf_enc: EncoderStack::new("kf.enc", config.dims),
            fsq_in: Linear::new("kf.fsq_in", dm, c),
            fsq_out: Linear::new("kf.fsq_out", c, dm),
            tf_query: Linear::new("tf.query", 2 * dm, dm),
            tf_memory: Linear::new("tf.memory", 2 * dm, dm),
            tf_layers,
            dense_in: Linear::new("dense.in", d, dm),
            dense_ffn: FeedForward::new("dense.ffn", dm, config.dims.ffn_dim),
            dense_ln: LayerNorm::new("dense.ln", dm),
            dec_in: Linear::new("dec.in", 2 * dm, dm),
            dec_enc: EncoderStack::new("dec.enc", config.dims),
            dec_head: Linear::new("dec.head", dm, d),
            config,
        })
    }

    pub fn uses_scorer(&self) -> bool {
        self.config.architecture == Architecture::Sparse && self.config.placement == Placement::Dynamic
    }

    /// Fresh parameters; only the sub-networks the configuration uses.
    pub fn init(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, "recon-init", 0);
        let cfg = &self.config;
        let quant = |store: &mut ParamStore, r: &mut rng::Rng| match cfg.codebook {
            CodebookKind::Fsq => {
                self.fsq_in.init(store, r);
                self.fsq_out.init(store, r);
            }
            CodebookKind::Vq => {
                let book = Codebook::init_vq(cfg.vq_size, cfg.dims.model_dim, r).expect("validated");
                if let Codebook::Vq { entries } = book {
                    store.insert(CODEBOOK_PARAM, entries);
                }
            }
        };
        match cfg.architecture {
            Architecture::Sparse => {
                if self.uses_scorer() {
                    self.scorer.init(&mut store, &mut r);
                }
                self.kf_in.init(&mut store, &mut r);
                self.kf_enc.init(&mut store, &mut r);
                quant(&mut store, &mut r);
                self.tf_query.init(&mut store, &mut r);
                self.tf_memory.init(&mut store, &mut r);
                for l in &self.tf_layers {
                    l.attn.init(&mut store, &mut r);
                    l.ffn.init(&mut store, &mut r);
                    l.ln_q.init(&mut store);
                    l.ln_mem.init(&mut store);
                    l.ln_ffn.init(&mut store);
                }
            }
            Architecture::Dense => {
                self.dense_in.init(&mut store, &mut r);
                self.dense_ffn.init(&mut store, &mut r);
                self.dense_ln.init(&mut store);
                quant(&mut store, &mut r);
            }
        }
        self.dec_in.init(&mut store, &mut r);
        self.dec_enc.init(&mut store, &mut r);
        self.dec_head.init(&mut store, &mut r);
        store
    }

    fn pe(&self, positions: &[usize]) -> Result<Mat> {
        sinusoidal_pe(positions, self.config.dims.model_dim)
    }

    fn quantize(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<QuantizedRows> {
        match self.config.codebook {
            CodebookKind::Fsq => {
                let book = Codebook::fsq(self.config.fsq_levels.clone())?;
                let z = self.fsq_in.forward(g, store, h);
                let q = fsq_graph(g, z, &book)?;
                Ok((self.fsq_out.forward(g, store, q.out), q.ids, None, None))
            }
            CodebookKind::Vq => {
                let entries = store.var(g, CODEBOOK_PARAM);
                let q = vq_graph(g, h, entries)?;
                Ok((q.out, q.ids, q.codebook_loss, q.commit_loss))
            }
        }
    }

    /// Quantized K×D keyframe embeddings, rows in ascending frame order.
    /// `st` is the 1×T straight-through mask, if the placement is learned.
    pub fn encode_keyframes_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frames: Var,
        indices: &[usize],
        st: Option<Var>,
    ) -> Result<QuantizedRows> {
        let (t, d) = g.shape(frames);
        if d != self.config.input_dim {
            return Err(Error::dim(format!("{d} channels, model expects {}", self.config.input_dim)));
        }
        if indices.is_empty() || indices.windows(2).any(|w| w[0] >= w[1]) || indices[indices.len() - 1] >= t {
            return Err(Error::validation("keyframe indices must be sorted, distinct and inside the sequence"));
        }
        let rows = g.gather_rows(frames, indices);
        let h = self.kf_in.forward(g, store, rows);
        let h = self.kf_enc.forward(g, store, h, None)?;
        let (z, codes, cb, cm) = self.quantize(g, store, h)?;
        let z = match st {
            Some(r) => {
                let col = g.transpose(r);
                let rk = g.gather_rows(col, indices);
                g.mul_col(z, rk)
            }
            None => z,
        };
        Ok((z, codes, cb, cm))
    }

    /// (T−K)×D transition latents and the head-averaged first-layer attention.
    pub fn encode_transitions_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z_kf: Var,
        t_kf: &[usize],
        t_tf: &[usize],
    ) -> Result<(Option<Var>, Option<Mat>)> {
        if t_tf.is_empty() {
            return Ok((None, None));
        }
        let dm = self.config.dims.model_dim;
        if g.shape(z_kf) != (t_kf.len(), dm) {
            return Err(Error::dim(format!("z_kf {:?}, expected {}x{dm}", g.shape(z_kf), t_kf.len())));
        }
        let (pe_tf, pe_kf) = if self.config.transition_pe {
            (self.pe(t_tf)?, self.pe(t_kf)?)
        } else {
            (Mat::zeros(t_tf.len(), dm), Mat::zeros(t_kf.len(), dm))
        };
        let ctx = g.col_mean(z_kf);
        let ones = g.constant(Mat::filled(t_tf.len(), 1, 1.0));
        let ctx = g.matmul(ones, ctx);
        let pe_tf = g.constant(pe_tf);
        let q = g.concat_cols(&[pe_tf, ctx]);
        let mut x = self.tf_query.forward(g, store, q);
        let pe_kf = g.constant(pe_kf);
        let mem = g.concat_cols(&[z_kf, pe_kf]);
        let mem = self.tf_memory.forward(g, store, mem);
        let mut first = None;
        for l in &self.tf_layers {
            let qn = l.ln_q.forward(g, store, x);
            let mn = l.ln_mem.forward(g, store, mem);
            let (a, w) = l.attn.forward_with_weights(g, store, qn, mn, None);
            if first.is_none() {
                let mut avg = w[0].clone();
                for m in &w[1..] {
                    avg.add_assign(m);
                }
                first = Some(avg.scale(1.0 / w.len() as f64));
            }
            x = g.add(x, a);
            let h = l.ln_ffn.forward(g, store, x);
            let f = l.ffn.forward(g, store, h);
            x = g.add(x, f);
        }
        Ok((Some(x), first))
    }

    /// T×d reconstruction from per-frame latent rows given in frame order.
    fn decode_rows(&self, g: &mut Graph, store: &ParamStore, rows: Var) -> Result<Var> {
        let t = g.shape(rows).0;
        let pos: Vec<usize> = (0..t).collect();
        let pe = g.constant(self.pe(&pos)?);
        let h = g.concat_cols(&[rows, pe]);
        let h = self.dec_in.forward(g, store, h);
        let h = self.dec_enc.forward(g, store, h, None)?;
        Ok(self.dec_head.forward(g, store, h))
    }

    pub fn decode_full_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z_kf: Var,
        t_kf: &[usize],
        z_tf: Option<Var>,
        t_tf: &[usize],
    ) -> Result<Var> {
        let order = interleave_order(t_kf, t_tf)?;
        let all = match z_tf {
            Some(z) => g.concat_rows(&[z_kf, z]),
            None => z_kf,
        };
        if g.shape(all).0 != order.len() {
            return Err(Error::dim("latent rows do not match positions"));
        }
        let rows = g.gather_rows(all, &order);
        self.decode_rows(g, store, rows)
    }

    /// Full sparse or dense reconstruction of `frames` (T×d node).
    /// `indices` is ignored by the dense architecture.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frames: Var,
        indices: &[usize],
        st: Option<Var>,
    ) -> Result<ReconForward> {
        let t = g.shape(frames).0;
        match self.config.architecture {
            Architecture::Sparse => {
                let (z_kf, codes, cb, cm) = self.encode_keyframes_graph(g, store, frames, indices, st)?;
                let t_tf = complement(t, indices);
                let (z_tf, attn) = self.encode_transitions_graph(g, store, z_kf, indices, &t_tf)?;
                let recon = self.decode_full_graph(g, store, z_kf, indices, z_tf, &t_tf)?;
                Ok(ReconForward {
                    recon,
                    codes,
                    indices: indices.to_vec(),
                    codebook_loss: cb,
                    commit_loss: cm,
                    transition_attention: attn,
                })
            }
            Architecture::Dense => {
                if g.shape(frames).1 != self.config.input_dim {
                    return Err(Error::dim("channel count differs from the model"));
                }
                let h = self.dense_in.forward(g, store, frames);
                let n = self.dense_ln.forward(g, store, h);
                let f = self.dense_ffn.forward(g, store, n);
                let h = g.add(h, f);
                let (z, codes, cb, cm) = self.quantize(g, store, h)?;
                let recon = self.decode_rows(g, store, z)?;
                Ok(ReconForward {
                    recon,
                    codes,
                    indices: (0..t).collect(),
                    codebook_loss: cb,
                    commit_loss: cm,
                    transition_attention: None,
                })
            }
        }
    }

    /// Deterministic keyframe placement for evaluation: noise-free top-k of
    /// the scorer logits, or the static grid.
    pub fn eval_mask(&self, store: &ParamStore, seq: &MotionSequence) -> Result<KeyframeMask> {
        let t = seq.len();
        match self.config.placement {
            Placement::Dynamic => hard_topk_mask(&score_logits(seq, &self.scorer, store)?, self.config.k),
            Placement::Static => KeyframeMask::from_indices(t, &static_uniform_indices(t, self.config.k)),
        }
    }
}

/// Evaluation-mode output of [`reconstruct`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub motion: MotionSequence,
    pub tokens: TokenSequence,
    pub indices: Vec<usize>,
    pub mse: f64,
}

fn check_seq(model: &ReconModel, seq: &MotionSequence) -> Result<()> {
    seq.validate()?;
    if seq.dims() != model.config.input_dim {
        return Err(Error::dim(format!(
            "sequence has {} channels, model expects {}",
            seq.dims(),
            model.config.input_dim
        )));
    }
    Ok(())
}

pub fn mse(a: &Mat, b: &Mat) -> f64 {
    a.zip_map(b, |x, y| (x - y) * (x - y)).mean()
}

/// Keyframe latents for a given mask (evaluation mode, no straight-through).
pub fn encode_keyframes(
    model: &ReconModel,
    store: &ParamStore,
    seq: &MotionSequence,
    mask: &KeyframeMask,
) -> Result<SparseLatent> {
    check_seq(model, seq)?;
    if mask.len() != seq.len() {
        return Err(Error::dim(format!("mask of length {} for {} frames", mask.len(), seq.len())));
    }
    let mut g = Graph::new();
    let x = g.constant(seq.frames.clone());
    let (z, codes, _, _) = model.encode_keyframes_graph(&mut g, store, x, &mask.indices, None)?;
    Ok(SparseLatent {
        z_kf: g.value(z).clone(),
        t_kf: mask.indices.clone(),
        t_tf: complement(seq.len(), &mask.indices),
        codes,
    })
}

pub fn encode_transitions(model: &ReconModel, store: &ParamStore, latent: &SparseLatent) -> Result<Mat> {
    latent.validate()?;
    let mut g = Graph::new();
    let z = g.constant(latent.z_kf.clone());
    match model.encode_transitions_graph(&mut g, store, z, &latent.t_kf, &latent.t_tf)?.0 {
        Some(v) => Ok(g.value(v).clone()),
        None => Ok(Mat::zeros(0, model.config.dims.model_dim)),
    }
}

pub fn decode_full(
    model: &ReconModel,
    store: &ParamStore,
    latent: &SparseLatent,
    z_tf: &Mat,
    fps: f64,
) -> Result<MotionSequence> {
    latent.validate()?;
    if z_tf.rows() != latent.t_tf.len() {
        return Err(Error::dim("transition latent rows differ from transition positions"));
    }
    let mut g = Graph::new();
    let zk = g.constant(latent.z_kf.clone());
    let zt = (z_tf.rows() > 0).then(|| g.constant(z_tf.clone()));
    let out = model.decode_full_graph(&mut g, store, zk, &latent.t_kf, zt, &latent.t_tf)?;
    MotionSequence::new(g.value(out).clone(), fps, crate::data::SchemaId::Generic)
}

/// Evaluation-mode pipeline: place keyframes, quantize, inpaint.
pub fn reconstruct(model: &ReconModel, store: &ParamStore, seq: &MotionSequence) -> Result<Reconstruction> {
    check_seq(model, seq)?;
    let t = seq.len();
    let indices = match model.config.architecture {
        Architecture::Sparse => model.eval_mask(store, seq)?.indices,
        Architecture::Dense => (0..t).collect(),
    };
    let mut g = Graph::new();
    let x = g.constant(seq.frames.clone());
    let f = model.forward(&mut g, store, x, &indices, None)?;
    let out = g.value(f.recon).clone();
    if !out.is_finite() {
        return Err(Error::Numerical {
            message: "non-finite reconstruction".into(),
            dump: None,
        });
    }
    let mut classes = vec![0u32; t];
    for (&i, &c) in indices.iter().zip(&f.codes) {
        classes[i] = c as u32 + 1;
    }
    let tokens = TokenSequence::new(classes, model.config.codebook, model.config.codebook_size())?;
    Ok(Reconstruction {
        mse: mse(&out, &seq.frames),
        motion: MotionSequence::new(out, seq.fps, seq.schema)?,
        tokens,
        indices,
    })
}

/// Token classes for `seq` under an explicit mask.
pub fn tokenize(
    model: &ReconModel,
    store: &ParamStore,
    seq: &MotionSequence,
    mask: &KeyframeMask,
) -> Result<TokenSequence> {
    let latent = encode_keyframes(model, store, seq, mask)?;
    let mut classes = vec![0u32; seq.len()];
    for (&i, &c) in latent.t_kf.iter().zip(&latent.codes) {
        classes[i] = c as u32 + 1;
    }
    TokenSequence::new(classes, model.config.codebook, model.config.codebook_size())
}

/// Motion for a token sequence: keyframe classes become codebook vectors,
/// class-0 frames are inpainted. A sequence without keyframes decodes to
/// neutral (all-zero) frames.
pub fn decode_tokens(
    model: &ReconModel,
    store: &ParamStore,
    tokens: &TokenSequence,
    fps: f64,
) -> Result<MotionSequence> {
    tokens.validate()?;
    if tokens.codebook_kind != model.config.codebook || tokens.codebook_size != model.config.codebook_size() {
        return Err(Error::validation("token vocabulary does not match the model codebook"));
    }
    let t_kf = tokens.keyframe_indices();
    if t_kf.is_empty() {
        return MotionSequence::neutral(tokens.length, model.config.input_dim, fps, crate::data::SchemaId::Generic);
    }
    let mut g = Graph::new();
    let codes: Vec<usize> = t_kf.iter().map(|&i| tokens.classes[i] as usize - 1).collect();
    let z = match model.config.codebook {
        CodebookKind::Fsq => {
            let book = Codebook::fsq(model.config.fsq_levels.clone())?;
            let rows: Vec<Vec<f64>> = codes.iter().map(|&c| book.code_vector(c)).collect::<Result<_>>()?;
            let q = g.constant(Mat::from_rows(&rows));
            model.fsq_out.forward(&mut g, store, q)
        }
        CodebookKind::Vq => {
            let e = g.constant(store.get(CODEBOOK_PARAM)?.clone());
            g.gather_rows(e, &codes)
        }
    };
    let t_tf = complement(tokens.length, &t_kf);
    let (z_tf, _) = model.encode_transitions_graph(&mut g, store, z, &t_kf, &t_tf)?;
    let out = model.decode_full_graph(&mut g, store, z, &t_kf, z_tf, &t_tf)?;
    MotionSequence::new(g.value(out).clone(), fps, crate::data::SchemaId::Generic)
}
