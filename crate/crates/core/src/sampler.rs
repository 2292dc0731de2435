//! Keyframe discovery: per-frame scoring, relaxed Gumbel top-k sampling with
//! straight-through hard masks, temperature annealing, and an exact
//! Plackett–Luce enumeration used as a test oracle.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::MotionSequence;
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_pe, Conv1d, EncoderStack, Linear, ModelDims, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::Mat;

/// Floor inside `ln(max(1 - hot1, eps))`; only guards `ln 0`.
pub const SUPPRESS_EPS: f64 = 1e-20;
/// Uniform draws are clamped to `[U_CLAMP, 1 - U_CLAMP]` before the double log.
pub const U_CLAMP: f64 = 1e-12;
/// Largest T accepted by [`topk_set_probabilities`].
pub const ENUM_MAX_T: usize = 12;
/// Largest K accepted by [`topk_set_probabilities`].
pub const ENUM_MAX_K: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeScores {
    logits: Vec<f64>,
}

impl KeyframeScores {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::validation("empty logit vector"));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite keyframe logit"));
        }
        Ok(KeyframeScores { logits })
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Same scores shifted by a constant.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.logits.iter().map(|v| v + c).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeMask {
    /// Relaxed k-hot vector (sum K).
    pub soft: Vec<f64>,
    /// Exactly K ones.
    pub hard: Vec<f64>,
    /// Sorted positions of the ones in `hard`.
    pub indices: Vec<usize>,
    /// Forward value of `hard - sg(soft) + soft`.
    pub straight_through: Vec<f64>,
}

impl KeyframeMask {
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn len(&self) -> usize {
        self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty()
    }

    /// Mask with the given hard set and `soft = hard`.
    pub fn from_indices(t: usize, indices: &[usize]) -> Result<Self> {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        if idx.len() != indices.len() || idx.is_empty() {
            return Err(Error::validation("mask indices must be distinct and non-empty"));
        }
        if idx.last().is_some_and(|&i| i >= t) {
            return Err(Error::validation(format!("mask index outside 0..{t}")));
        }
        let hard = hard_from_indices(t, &idx);
        Ok(KeyframeMask {
            soft: hard.clone(),
            straight_through: hard.clone(),
            hard,
            indices: idx,
        })
    }
}

fn hard_from_indices(t: usize, idx: &[usize]) -> Vec<f64> {
    let mut h = vec![0.0; t];
    for &i in idx {
        h[i] = 1.0;
    }
    h
}

/// Positions of the K largest values, ties to the lower index, returned sorted.
pub fn topk_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut top = order[..k.min(values.len())].to_vec();
    top.sort_unstable();
    top
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnnealShape {
    Linear,
    Exponential,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub tau_start: f64,
    pub tau_end: f64,
    pub steps: usize,
    pub shape: AnnealShape,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            tau_start: 5.0,
            tau_end: 0.5,
            steps: 1000,
            shape: AnnealShape::Exponential,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_end > 0.0 && self.tau_end.is_finite() && self.tau_start.is_finite()) {
            return Err(Error::validation("temperatures must be positive and finite"));
        }
        if self.tau_end > self.tau_start {
            return Err(Error::validation(format!(
                "tau_end {} exceeds tau_start {}",
                self.tau_end, self.tau_start
            )));
        }
        Ok(())
    }

    /// Temperature at `step`; reaches `tau_end` at `steps` and stays there.
    pub fn tau(&self, step: usize) -> f64 {
        if self.steps == 0 {
            return self.tau_end;
        }
        let p = step.min(self.steps) as f64 / self.steps as f64;
        let (a, b) = (self.tau_start, self.tau_end);
        let t = match self.shape {
            AnnealShape::Linear => a + (b - a) * p,
            AnnealShape::Exponential => a * (b / a).powf(p),
            AnnealShape::Cosine => b + 0.5 * (a - b) * (1.0 + (std::f64::consts::PI * p).cos()),
        };
        // clamp away rounding overshoot so the sequence stays monotone
        t.clamp(b, a)
    }
}

pub fn gumbel_from_rng(n: usize, r: &mut Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = r.gen::<f64>().clamp(U_CLAMP, 1.0 - U_CLAMP);
            -(-u.ln()).ln()
        })
        .collect()
}

/// `n` i.i.d. Gumbel(0, 1) draws, fully determined by `seed`.
pub fn gumbel_noise(n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::validation("gumbel_noise needs at least one element"));
    }
    Ok(gumbel_from_rng(n, &mut rng::stream(seed, "gumbel", 0)))
}

fn check_topk_args(t: usize, k: usize, tau: f64, noise: &[f64]) -> Result<()> {
    if k == 0 || k > t {
        return Err(Error::validation(format!("K = {k} outside 1..={t}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::validation(format!("temperature must be positive, got {tau}")));
    }
    if noise.len() != t {
        return Err(Error::dim(format!("noise length {} for {t} logits", noise.len())));
    }
    if noise.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite noise"));
    }
    Ok(())
}

fn softmax_scaled(a: &[f64], inv_tau: f64) -> Vec<f64> {
    let m = a.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y)) * inv_tau;
    let e: Vec<f64> = a.iter().map(|&v| (v * inv_tau - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Relaxed top-k: K rounds of softmax with multiplicative suppression of the
/// mass already taken, starting from a zero `hot1`.
pub fn soft_topk_mask(scores: &KeyframeScores, k: usize, tau: f64, noise: &[f64]) -> Result<KeyframeMask> {
    let t = scores.len();
    check_topk_args(t, k, tau, noise)?;
    let mut a: Vec<f64> = scores.logits.iter().zip(noise).map(|(s, g)| s + g).collect();
    let mut hot1 = vec![0.0; t];
    let mut hot_k = vec![0.0; t];
    for _ in 0..k {
        for (ai, h) in a.iter_mut().zip(&hot1) {
            *ai += (1.0f64 - h).max(SUPPRESS_EPS).ln();
        }
        hot1 = softmax_scaled(&a, 1.0 / tau);
        for (acc, h) in hot_k.iter_mut().zip(&hot1) {
            *acc += h;
        }
    }
    let indices = topk_indices(&hot_k, k);
    let hard = hard_from_indices(t, &indices);
    Ok(KeyframeMask {
        soft: hot_k,
        straight_through: hard.clone(),
        hard,
        indices,
    })
}

/// Noise-free top-k of the logits (evaluation mode).
pub fn hard_topk_mask(scores: &KeyframeScores, k: usize) -> Result<KeyframeMask> {
    if k == 0 || k > scores.len() {
        return Err(Error::validation(format!("K = {k} outside 1..={}", scores.len())));
    }
    KeyframeMask::from_indices(scores.len(), &topk_indices(&scores.logits, k))
}

/// Graph handles produced by [`soft_topk_graph`].
#[derive(Debug, Clone)]
pub struct RelaxedTopK {
    /// 1×T relaxed k-hot.
    pub soft: Var,
    /// 1×T straight-through mask: value `hard`, gradient of `soft`.
    pub straight_through: Var,
    pub mask: KeyframeMask,
}

/// Differentiable version of [`soft_topk_mask`] on a 1×T logit node.
pub fn soft_topk_graph(g: &mut Graph, logits: Var, k: usize, tau: f64, noise: &[f64]) -> Result<RelaxedTopK> {
    let (rows, t) = g.shape(logits);
    if rows != 1 {
        return Err(Error::dim(format!("logits must be 1xT, got {rows}x{t}")));
    }
    check_topk_args(t, k, tau, noise)?;
    let gn = g.constant(Mat::row_vector(noise));
    let mut a = g.add(logits, gn);
    let mut hot1 = g.constant(Mat::zeros(1, t));
    let mut hot_k: Option<Var> = None;
    for _ in 0..k {
        let neg = g.scale(hot1, -1.0);
        let one_minus = g.add_scalar(neg, 1.0);
        let m = g.clamp_min(one_minus, SUPPRESS_EPS);
        let lm = g.ln(m);
        a = g.add(a, lm);
        let scaled = g.scale(a, 1.0 / tau);
        hot1 = g.softmax_rows(scaled);
        hot_k = Some(match hot_k {
            None => hot1,
            Some(h) => g.add(h, hot1),
        });
    }
    let soft = hot_k.expect("k >= 1");
    let soft_vals = g.value(soft).data().to_vec();
    let indices = topk_indices(&soft_vals, k);
    let hard = hard_from_indices(t, &indices);
    let straight_through = g.straight_through(Mat::row_vector(&hard), soft);
    Ok(RelaxedTopK {
        soft,
        straight_through,
        mask: KeyframeMask {
            soft: soft_vals,
            straight_through: hard.clone(),
            hard,
            indices,
        },
    })
}

/// d soft / d logits (T×T, row = output) for fixed noise.
pub fn soft_topk_jacobian(scores: &KeyframeScores, k: usize, tau: f64, noise: &[f64]) -> Result<Mat> {
    let t = scores.len();
    let mut jac = Mat::zeros(t, t);
    for i in 0..t {
        let mut g = Graph::new();
        let s = g.input(Mat::row_vector(scores.logits()));
        let r = soft_topk_graph(&mut g, s, k, tau, noise)?;
        let out = g.slice_cols(r.soft, i, 1);
        let out = g.sum_all(out);
        let grads = g.backward(out);
        let row = grads.get_or_zeros(s, (1, t));
        jac.row_mut(i).copy_from_slice(row.data());
    }
    Ok(jac)
}

/// Exact probability of every unordered K-subset under sequential sampling
/// without replacement with weights `exp(s)`.
pub fn topk_set_probabilities(scores: &KeyframeScores, k: usize) -> Result<BTreeMap<Vec<usize>, f64>> {
    let t = scores.len();
    if t > ENUM_MAX_T || k > ENUM_MAX_K {
        return Err(Error::Capacity(format!(
            "enumeration limited to T <= {ENUM_MAX_T}, K <= {ENUM_MAX_K}; got T = {t}, K = {k}"
        )));
    }
    if k == 0 || k > t {
        return Err(Error::validation(format!("K = {k} outside 1..={t}")));
    }
    let m = scores.logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let w: Vec<f64> = scores.logits.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut out = BTreeMap::new();
    let mut prefix = Vec::with_capacity(k);
    enumerate(&w, k, total, 1.0, &mut prefix, &mut out);
    Ok(out)
}

fn enumerate(
    w: &[f64],
    k: usize,
    remaining: f64,
    p: f64,
    prefix: &mut Vec<usize>,
    out: &mut BTreeMap<Vec<usize>, f64>,
) {
    if prefix.len() == k {
        let mut key = prefix.clone();
        key.sort_unstable();
        *out.entry(key).or_insert(0.0) += p;
        return;
    }
    for i in 0..w.len() {
        if prefix.contains(&i) {
            continue;
        }
        prefix.push(i);
        enumerate(w, k, remaining - w[i], p * w[i] / remaining, prefix, out);
        prefix.pop();
    }
}

/// Lowest reconstruction error wins; exact ties go to the lexicographically
/// smallest index set.
pub fn select_best_placement(candidates: &[(KeyframeMask, f64)]) -> Result<KeyframeMask> {
    if candidates.is_empty() {
        return Err(Error::validation("no placement candidates"));
    }
    if candidates.iter().any(|(_, e)| !e.is_finite()) {
        return Err(Error::validation("non-finite reconstruction error"));
    }
    let best = candidates
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.indices.cmp(&b.0.indices)))
        .expect("non-empty");
    Ok(best.0.clone())
}

/// Negative log-likelihood of drawing `indices` in order of descending logit
/// under sequential sampling without replacement: the scorer's placement loss.
pub fn placement_nll(g: &mut Graph, logits: Var, indices: &[usize]) -> Result<Var> {
    let t = g.shape(logits).1;
    if indices.is_empty() || indices.iter().any(|&i| i >= t) {
        return Err(Error::validation("placement indices out of range"));
    }
    let vals = g.value(logits).data().to_vec();
    let mut order = indices.to_vec();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let mut blocked = Mat::zeros(1, t);
    let mut terms = Vec::with_capacity(order.len());
    for &i in &order {
        let mask = g.constant(blocked.clone());
        let masked = g.add(logits, mask);
        let lp = g.log_softmax_rows(masked);
        terms.push(g.slice_cols(lp, i, 1));
        blocked.set(0, i, crate::nn::MASKED);
    }
    let all = g.concat_cols(&terms);
    let s = g.sum_all(all);
    Ok(g.scale(s, -1.0))
}

/// Per-frame keyframe scorer: temporal convolution, linear projection,
/// position code, encoder blocks, scalar head.
#[derive(Debug, Clone)]
pub struct LogitsEncoder {
    pub name: String,
    pub input_dim: usize,
    pub dims: ModelDims,
    conv: Conv1d,
    proj: Linear,
    stack: EncoderStack,
    head: Linear,
}

pub const SCORER_KERNEL: usize = 3;

impl LogitsEncoder {
    pub fn new(name: impl Into<String>, input_dim: usize, dims: ModelDims) -> Self {
        let name = name.into();
        let dm = dims.model_dim;
        LogitsEncoder {
            conv: Conv1d::new(format!("{name}.conv"), input_dim, dm, SCORER_KERNEL),
            proj: Linear::new(format!("{name}.proj"), dm, dm),
            stack: EncoderStack::new(format!("{name}.enc"), dims),
            head: Linear::new(format!("{name}.head"), dm, 1),
            name,
            input_dim,
            dims,
        }
    }

    pub fn conv(&self) -> &Conv1d {
        &self.conv
    }

    pub fn head_prefix(&self) -> String {
        format!("{}.head.", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.conv.init(store, rng);
        self.proj.init(store, rng);
        self.stack.init(store, rng);
        self.head.init(store, rng);
    }

    /// T×d frames → 1×T logits.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, frames: Var) -> Result<Var> {
        let t = g.shape(frames).0;
        let h = self.conv.forward(g, store, frames)?;
        let h = self.proj.forward(g, store, h);
        let pos: Vec<usize> = (0..t).collect();
        let pe = g.constant(sinusoidal_pe(&pos, self.dims.model_dim)?);
        let h = g.add(h, pe);
        let h = self.stack.forward(g, store, h, None)?;
        let s = self.head.forward(g, store, h);
        Ok(g.transpose(s))
    }
}

pub fn score_logits(seq: &MotionSequence, encoder: &LogitsEncoder, store: &ParamStore) -> Result<KeyframeScores> {
    seq.validate()?;
    if seq.dims() != encoder.input_dim {
        return Err(Error::dim(format!(
            "scorer expects {} channels, sequence has {}",
            encoder.input_dim,
            seq.dims()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(seq.frames.clone());
    let s = encoder.forward(&mut g, store, x)?;
    KeyframeScores::new(g.value(s).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(v: &[f64]) -> KeyframeScores {
        KeyframeScores::new(v.to_vec()).unwrap()
    }

    #[test]
    fn dominant_logit_wins_at_low_temperature() {
        let s = scores(&[10.0, 0.0, 0.0, 0.0]);
        let m = soft_topk_mask(&s, 1, 0.01, &[0.9, -0.9, 0.5, 0.99]).unwrap();
        assert_eq!(m.hard, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.indices, vec![0]);
    }

    #[test]
    fn high_temperature_spreads_mass() {
        let t = 10;
        let s = scores(&vec![0.3; t]);
        let noise = gumbel_noise(t, 5).unwrap();
        let m = soft_topk_mask(&s, 3, 1e6, &noise).unwrap();
        for v in &m.soft {
            assert!((v - 0.3).abs() < 1e-2, "{v}");
        }
    }

    #[test]
    fn graph_and_plain_paths_agree() {
        let s = scores(&[0.4, -1.0, 2.0, 0.1, 0.0, 1.5]);
        let noise = gumbel_noise(6, 3).unwrap();
        let plain = soft_topk_mask(&s, 3, 0.7, &noise).unwrap();
        let mut g = Graph::new();
        let x = g.input(Mat::row_vector(s.logits()));
        let r = soft_topk_graph(&mut g, x, 3, 0.7, &noise).unwrap();
        assert_eq!(r.mask.indices, plain.indices);
        for (a, b) in r.mask.soft.iter().zip(&plain.soft) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(g.value(r.straight_through).data(), plain.hard.as_slice());
    }

    #[test]
    fn enumeration_examples() {
        let p = topk_set_probabilities(&scores(&[0.0; 4]), 2).unwrap();
        assert_eq!(p.len(), 6);
        for v in p.values() {
            assert!((v - 1.0 / 6.0).abs() < 1e-12);
        }
        let p = topk_set_probabilities(&scores(&[0.3, -0.2]), 2).unwrap();
        assert!((p[&vec![0, 1]] - 1.0).abs() < 1e-12);
        let p = topk_set_probabilities(&scores(&[2f64.ln(), 0.0, 0.0]), 1).unwrap();
        assert!((p[&vec![0]] - 0.5).abs() < 1e-12);
        assert!((p[&vec![1]] - 0.25).abs() < 1e-12);
        assert!(matches!(
            topk_set_probabilities(&scores(&[0.0; 13]), 2),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn best_placement_tie_break() {
        let m = |i: &[usize]| KeyframeMask::from_indices(8, i).unwrap();
        let c = vec![(m(&[1, 5]), 0.5), (m(&[2, 3]), 0.2), (m(&[0, 4]), 0.9)];
        assert_eq!(select_best_placement(&c).unwrap().indices, vec![2, 3]);
        let c = vec![(m(&[1, 5]), 0.3), (m(&[0, 6]), 0.3)];
        assert_eq!(select_best_placement(&c).unwrap().indices, vec![0, 6]);
        assert!(select_best_placement(&[]).is_err());
    }

    #[test]
    fn anneal_endpoints_and_monotone() {
        for shape in [AnnealShape::Linear, AnnealShape::Exponential, AnnealShape::Cosine] {
            let a = AnnealSchedule {
                shape,
                steps: 50,
                ..Default::default()
            };
            assert_eq!(a.tau(0), 5.0);
            assert!((a.tau(50) - 0.5).abs() < 1e-12);
            assert!((1..80).all(|s| a.tau(s) <= a.tau(s - 1)));
        }
    }

    #[test]
    fn argument_errors() {
        let s = scores(&[0.0; 4]);
        let n = [0.0; 4];
        assert!(soft_topk_mask(&s, 5, 1.0, &n).is_err());
        assert!(soft_topk_mask(&s, 0, 1.0, &n).is_err());
        assert!(soft_topk_mask(&s, 2, 0.0, &n).is_err());
        assert!(soft_topk_mask(&s, 2, 1.0, &n[..3]).is_err());
        assert!(gumbel_noise(0, 1).is_err());
    }

    #[test]
    fn placement_nll_matches_closed_form() {
        let s = [0.5, -0.3, 1.2, 0.0];
        let mut g = Graph::new();
        let x = g.input(Mat::row_vector(&s));
        let nll = placement_nll(&mut g, x, &[0, 2]).unwrap();
        let z1: f64 = s.iter().map(|v| v.exp()).sum();
        let z2 = z1 - s[2].exp();
        let want = -((s[2].exp() / z1) * (s[0].exp() / z2)).ln();
        assert!((g.value(nll).scalar_value() - want).abs() < 1e-12);
    }
}
