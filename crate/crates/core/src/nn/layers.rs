use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::rng::Rng;
use crate::tensor::Mat;

/// Additive attention-mask value for blocked positions. Finite, so a fully
/// masked row degrades to a uniform distribution instead of NaN.
pub const MASKED: f64 = -1e30;

const LN_EPS: f64 = 1e-5;

/// Width/depth of a transformer sub-network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            model_dim: 256,
            heads: 4,
            layers: 2,
            ffn_dim: 512,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return Err(Error::validation("model dims must be positive"));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::validation(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if !self.model_dim.is_multiple_of(2) {
            return Err(Error::validation("model_dim must be even"));
        }
        Ok(())
    }
}

/// Sinusoidal position codes, one row per position: column `2i` holds
/// `sin(p / 10000^(2i/dim))`, column `2i+1` the matching cosine.
pub fn sinusoidal_pe(positions: &[usize], dim: usize) -> Result<Mat> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::validation(format!("position code dim must be even, got {dim}")));
    }
    Ok(Mat::from_fn(positions.len(), dim, |r, c| {
        let i = (c / 2) as f64;
        let freq = 1.0 / 10000f64.powf(2.0 * i / dim as f64);
        let a = positions[r] as f64 * freq;
        if c % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    }))
}

/// Query `q` may see key `k` iff `k_times[k] <= q_times[q]`.
pub fn time_mask(q_times: &[usize], k_times: &[usize]) -> Mat {
    Mat::from_fn(q_times.len(), k_times.len(), |q, k| {
        if k_times[k] <= q_times[q] {
            0.0
        } else {
            MASKED
        }
    })
}

pub fn causal_mask(n: usize) -> Mat {
    let t: Vec<usize> = (0..n).collect();
    time_mask(&t, &t)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Linear {
            name: name.into(),
            input,
            output,
        }
    }

    fn w(&self) -> String {
        format!("{}.w", self.name)
    }

    fn b(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        store.init_xavier(&self.w(), self.input, self.output, rng);
        store.init_const(&self.b(), 1, self.output, 0.0);
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = store.var(g, &self.w());
        let b = store.var(g, &self.b());
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }
}

/// 1-D convolution over time with "same" padding: rows are time steps,
/// columns channels. Weight rows are ordered `tap * input + channel`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(name: impl Into<String>, input: usize, output: usize, kernel: usize) -> Self {
        Conv1d {
            name: name.into(),
            input,
            output,
            kernel,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        store.init_xavier(&self.weight_name(), self.kernel * self.input, self.output, rng);
        store.init_const(&format!("{}.b", self.name), 1, self.output, 0.0);
    }

    /// Centred ("same") padding.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let left = (self.kernel - 1) / 2;
        self.forward_padded(g, store, x, left, self.kernel - 1 - left)
    }

    /// Left padding only: row t sees inputs up to t.
    pub fn forward_causal(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        self.forward_padded(g, store, x, self.kernel - 1, 0)
    }

    fn forward_padded(&self, g: &mut Graph, store: &ParamStore, x: Var, left: usize, right: usize) -> Result<Var> {
        if g.shape(x).1 != self.input {
            return Err(Error::dim(format!(
                "{}: {} input channels, expected {}",
                self.name,
                g.shape(x).1,
                self.input
            )));
        }
        let cols = g.unfold(x, self.kernel, left, right);
        let w = store.var(g, &self.weight_name());
        let b = store.var(g, &format!("{}.b", self.name));
        let h = g.matmul(cols, w);
        Ok(g.add_row(h, b))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        LayerNorm {
            name: name.into(),
            dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.init_const(&format!("{}.gain", self.name), 1, self.dim, 1.0);
        store.init_const(&format!("{}.bias", self.name), 1, self.dim, 0.0);
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let mu = g.row_mean(x);
        let neg_mu = g.scale(mu, -1.0);
        let xc = g.add_col(x, neg_mu);
        let sq = g.mul(xc, xc);
        let var = g.row_mean(sq);
        let var = g.add_scalar(var, LN_EPS);
        let inv = g.powf(var, -0.5);
        let y = g.mul_col(xc, inv);
        let gain = store.var(g, &format!("{}.gain", self.name));
        let bias = store.var(g, &format!("{}.bias", self.name));
        let y = g.mul_row(y, gain);
        g.add_row(y, bias)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone)]
pub struct Attention {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attention {
    pub fn new(name: impl Into<String>, dim: usize, heads: usize) -> Self {
        let name = name.into();
        Attention {
            q: Linear::new(format!("{name}.q"), dim, dim),
            k: Linear::new(format!("{name}.k"), dim, dim),
            v: Linear::new(format!("{name}.v"), dim, dim),
            o: Linear::new(format!("{name}.o"), dim, dim),
            name,
            dim,
            heads,
        }
    }

    /// Key/value source with its own width (cross-attention into a memory of another size).
    pub fn with_kv_dim(name: impl Into<String>, dim: usize, kv_dim: usize, heads: usize) -> Self {
        let mut a = Attention::new(name, dim, heads);
        a.k.input = kv_dim;
        a.v.input = kv_dim;
        a
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.q.init(store, rng);
        self.k.init(store, rng);
        self.v.init(store, rng);
        self.o.init(store, rng);
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query: Var,
        memory: Var,
        mask: Option<&Mat>,
    ) -> Var {
        self.forward_with_weights(g, store, query, memory, mask).0
    }

    /// Output plus the per-head attention distributions (rows = queries).
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query: Var,
        memory: Var,
        mask: Option<&Mat>,
    ) -> (Var, Vec<Mat>) {
        let q = self.q.forward(g, store, query);
        let k = self.k.forward(g, store, memory);
        let v = self.v.forward(g, store, memory);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mask = mask.map(|m| g.constant(m.clone()));
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh),
                    g.slice_cols(k, h * dh, dh),
                    g.slice_cols(v, h * dh, dh),
                )
            };
            let s = g.matmul_t(qh, kh);
            let s = g.scale(s, scale);
            let s = match mask {
                Some(m) => g.add(s, m),
                None => s,
            };
            let a = g.softmax_rows(s);
            weights.push(g.value(a).clone());
            heads.push(g.matmul(a, vh));
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)
        };
        (self.o.forward(g, store, cat), weights)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub name: String,
    inner: Linear,
    out: Linear,
}

impl FeedForward {
    pub fn new(name: impl Into<String>, dim: usize, hidden: usize) -> Self {
        let name = name.into();
        FeedForward {
            inner: Linear::new(format!("{name}.inner"), dim, hidden),
            out: Linear::new(format!("{name}.o"), hidden, dim),
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.inner.init(store, rng);
        self.out.init(store, rng);
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.inner.forward(g, store, x);
        let h = g.gelu(h);
        self.out.forward(g, store, h)
    }
}

/// Pre-norm residual block: self-attention then feed-forward.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    attn: Attention,
    ffn: FeedForward,
    ln_attn: LayerNorm,
    ln_ffn: LayerNorm,
}

impl EncoderLayer {
    pub fn new(name: &str, dims: &ModelDims) -> Self {
        EncoderLayer {
            attn: Attention::new(format!("{name}.attn"), dims.model_dim, dims.heads),
            ffn: FeedForward::new(format!("{name}.ffn"), dims.model_dim, dims.ffn_dim),
            ln_attn: LayerNorm::new(format!("{name}.ln_attn"), dims.model_dim),
            ln_ffn: LayerNorm::new(format!("{name}.ln_ffn"), dims.model_dim),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.attn.init(store, rng);
        self.ffn.init(store, rng);
        self.ln_attn.init(store);
        self.ln_ffn.init(store);
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: Option<&Mat>) -> Var {
        let h = self.ln_attn.forward(g, store, x);
        let a = self.attn.forward(g, store, h, h, mask);
        let x = g.add(x, a);
        let h = self.ln_ffn.forward(g, store, x);
        let f = self.ffn.forward(g, store, h);
        g.add(x, f)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderStack {
    pub name: String,
    pub dims: ModelDims,
    layers: Vec<EncoderLayer>,
}

impl EncoderStack {
    pub fn new(name: impl Into<String>, dims: ModelDims) -> Self {
        let name = name.into();
        let layers = (0..dims.layers)
            .map(|i| EncoderLayer::new(&format!("{name}.l{i}"), &dims))
            .collect();
        EncoderStack { name, dims, layers }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for l in &self.layers {
            l.init(store, rng);
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: Option<&Mat>) -> Result<Var> {
        let (t, d) = g.shape(x);
        if d != self.dims.model_dim {
            return Err(Error::dim(format!(
                "{}: input width {d}, model_dim {}",
                self.name, self.dims.model_dim
            )));
        }
        if let Some(m) = mask {
            if m.shape() != (t, t) {
                return Err(Error::dim(format!(
                    "{}: mask {:?} for {t} positions",
                    self.name,
                    m.shape()
                )));
            }
        }
        let mut x = x;
        for l in &self.layers {
            x = l.forward(g, store, x, mask);
        }
        Ok(x)
    }
}

/// Gated dual-stream block:
///
/// ```text
/// x~ = SelfAtt(x)
/// x  = x + x~ + alpha * CrossAtt(x~, y)
/// x  = x + FFN(x)
/// ```
///
/// `alpha` is a learnable scalar starting at zero.
#[derive(Debug, Clone)]
pub struct GatedFusion {
    pub name: String,
    pub dim: usize,
    self_attn: Attention,
    cross_attn: Attention,
    ffn: FeedForward,
    ln_x: LayerNorm,
    ln_q: LayerNorm,
    ln_y: LayerNorm,
    ln_ffn: LayerNorm,
}

impl GatedFusion {
    pub fn new(name: impl Into<String>, dims: &ModelDims) -> Self {
        let name = name.into();
        let d = dims.model_dim;
        GatedFusion {
            self_attn: Attention::new(format!("{name}.self_attn"), d, dims.heads),
            cross_attn: Attention::new(format!("{name}.cross_attn"), d, dims.heads),
            ffn: FeedForward::new(format!("{name}.ffn"), d, dims.ffn_dim),
            ln_x: LayerNorm::new(format!("{name}.ln_x"), d),
            ln_q: LayerNorm::new(format!("{name}.ln_q"), d),
            ln_y: LayerNorm::new(format!("{name}.ln_y"), d),
            ln_ffn: LayerNorm::new(format!("{name}.ln_ffn"), d),
            name,
            dim: d,
        }
    }

    pub fn alpha_name(&self) -> String {
        format!("{}.alpha", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.self_attn.init(store, rng);
        self.cross_attn.init(store, rng);
        self.ffn.init(store, rng);
        self.ln_x.init(store);
        self.ln_q.init(store);
        self.ln_y.init(store);
        self.ln_ffn.init(store);
        store.init_const(&self.alpha_name(), 1, 1, 0.0);
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        y: Var,
        self_mask: Option<&Mat>,
        cross_mask: Option<&Mat>,
    ) -> Result<Var> {
        if g.shape(x).1 != self.dim || g.shape(y).1 != self.dim {
            return Err(Error::dim(format!(
                "{}: widths {} / {} vs model_dim {}",
                self.name,
                g.shape(x).1,
                g.shape(y).1,
                self.dim
            )));
        }
        let h = self.ln_x.forward(g, store, x);
        let xt = self.self_attn.forward(g, store, h, h, self_mask);
        let q = self.ln_q.forward(g, store, xt);
        let mem = self.ln_y.forward(g, store, y);
        let c = self.cross_attn.forward(g, store, q, mem, cross_mask);
        let alpha = store.var(g, &self.alpha_name());
        let gated = g.mul_scalar_var(c, alpha);
        let x = g.add(x, xt);
        let x = g.add(x, gated);
        let h = self.ln_ffn.forward(g, store, x);
        let f = self.ffn.forward(g, store, h);
        Ok(g.add(x, f))
    }
}
