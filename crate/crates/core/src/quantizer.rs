//! Keyframe quantization.
//!
//! VQ picks the nearest codeword. FSQ bounds each channel with
//! `b = h * tanh(z)`, `h = (L - 1) / 2`, and snaps `b + h` to one of the `L`
//! integer levels `0..L`; the code id is the mixed-radix number formed by the
//! per-channel levels, channel 0 least significant.
//!
//! The FSQ output for level `i` is `atanh((i - h) / (h + 1/2))`: the grid
//! value expressed back in input space, so re-encoding an output always lands
//! on the same level.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookKind {
    Vq,
    Fsq,
}

impl std::str::FromStr for CodebookKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vq" => Ok(CodebookKind::Vq),
            "fsq" => Ok(CodebookKind::Fsq),
            _ => Err(Error::Config(format!("unknown codebook kind `{s}`"))),
        }
    }
}

pub const DEFAULT_FSQ_LEVELS: [usize; 4] = [4, 4, 4, 4];

#[derive(Debug, Clone, PartialEq)]
pub enum Codebook {
    Vq { entries: Mat },
    Fsq { levels: Vec<usize> },
}

impl Codebook {
    pub fn vq(entries: Mat) -> Result<Self> {
        if entries.rows() == 0 || entries.cols() == 0 {
            return Err(Error::validation("VQ codebook must be at least 1x1"));
        }
        if !entries.is_finite() {
            return Err(Error::validation("VQ codebook contains non-finite entries"));
        }
        Ok(Codebook::Vq { entries })
    }

    pub fn fsq(levels: Vec<usize>) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(|&l| l < 2) {
            return Err(Error::validation(format!("FSQ levels must all be >= 2, got {levels:?}")));
        }
        if levels.iter().try_fold(1usize, |a, &l| a.checked_mul(l)).is_none() {
            return Err(Error::Capacity("FSQ codebook size overflows".into()));
        }
        Ok(Codebook::Fsq { levels })
    }

    /// `n × d` entries drawn from `U[-1/n, 1/n]`.
    pub fn init_vq(n: usize, d: usize, rng: &mut Rng) -> Result<Self> {
        let b = 1.0 / n.max(1) as f64;
        let mut m = Mat::from_fn(n, d, |_, _| rng.gen_range(-b..=b));
        m.round_f32();
        Self::vq(m)
    }

    pub fn kind(&self) -> CodebookKind {
        match self {
            Codebook::Vq { .. } => CodebookKind::Vq,
            Codebook::Fsq { .. } => CodebookKind::Fsq,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Codebook::Vq { entries } => entries.rows(),
            Codebook::Fsq { levels } => levels.iter().product(),
        }
    }

    /// Width of the vectors this book quantizes.
    pub fn dim(&self) -> usize {
        match self {
            Codebook::Vq { entries } => entries.cols(),
            Codebook::Fsq { levels } => levels.len(),
        }
    }

    pub fn encode(&self, z: &[f64]) -> Result<(usize, Vec<f64>)> {
        match self {
            Codebook::Vq { .. } => vq_encode(z, self),
            Codebook::Fsq { .. } => fsq_encode(z, self),
        }
    }

    /// Output vector of code `id`.
    pub fn code_vector(&self, id: usize) -> Result<Vec<f64>> {
        if id >= self.size() {
            return Err(Error::validation(format!("code {id} outside book of {}", self.size())));
        }
        match self {
            Codebook::Vq { entries } => Ok(entries.row(id).to_vec()),
            Codebook::Fsq { levels } => {
                let idx = fsq_id_to_levels(id, levels)?;
                Ok(idx.iter().zip(levels).map(|(&i, &l)| fsq_level_value(i, l)).collect())
            }
        }
    }
}

fn check_vec(z: &[f64], d: usize) -> Result<()> {
    if z.len() != d {
        return Err(Error::dim(format!("vector of length {} for codebook width {d}", z.len())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite vector"));
    }
    Ok(())
}

/// Nearest codeword by Euclidean distance; ties to the lowest id.
pub fn vq_encode(z: &[f64], book: &Codebook) -> Result<(usize, Vec<f64>)> {
    let Codebook::Vq { entries } = book else {
        return Err(Error::validation("vq_encode needs a VQ codebook"));
    };
    check_vec(z, entries.cols())?;
    let mut best = (0, f64::INFINITY);
    for r in 0..entries.rows() {
        let d: f64 = entries.row(r).iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (r, d);
        }
    }
    Ok((best.0, entries.row(best.0).to_vec()))
}

/// `(‖sg(z) − z_q‖², ‖sg(z_q) − z‖²)`; equal in value, different in routing.
pub fn vq_losses(z: &[f64], zq: &[f64]) -> (f64, f64) {
    let d: f64 = z.iter().zip(zq).map(|(a, b)| (a - b) * (a - b)).sum();
    (d, d)
}

/// Codebook and commitment losses over the rows of `z` and `zq`, averaged
/// per vector. The first only moves `zq`, the second only `z`.
pub fn vq_losses_graph(g: &mut Graph, z: Var, zq: Var) -> (Var, Var) {
    let rows = g.shape(z).0.max(1) as f64;
    let sq_norm = |g: &mut Graph, a: Var, b: Var| {
        let d = g.sub(a, b);
        let s = g.mul(d, d);
        let s = g.sum_all(s);
        g.scale(s, 1.0 / rows)
    };
    let zs = g.stop_grad(z);
    let codebook = sq_norm(g, zs, zq);
    let zqs = g.stop_grad(zq);
    let commit = sq_norm(g, zqs, z);
    (codebook, commit)
}

fn fsq_half(l: usize) -> f64 {
    (l as f64 - 1.0) / 2.0
}

/// Level in `0..l` chosen for one channel value.
pub fn fsq_level(z: f64, l: usize) -> usize {
    let h = fsq_half(l);
    let b = h * z.tanh();
    (b + h).round().clamp(0.0, (l - 1) as f64) as usize
}

pub fn fsq_level_value(i: usize, l: usize) -> f64 {
    let h = fsq_half(l);
    ((i as f64 - h) / (h + 0.5)).atanh()
}

pub fn fsq_levels_to_id(idx: &[usize], levels: &[usize]) -> Result<usize> {
    if idx.len() != levels.len() {
        return Err(Error::dim("level vector length differs from codebook"));
    }
    let mut id = 0;
    let mut radix = 1;
    for (&i, &l) in idx.iter().zip(levels) {
        if i >= l {
            return Err(Error::validation(format!("level {i} outside 0..{l}")));
        }
        id += i * radix;
        radix *= l;
    }
    Ok(id)
}

pub fn fsq_id_to_levels(id: usize, levels: &[usize]) -> Result<Vec<usize>> {
    let size: usize = levels.iter().product();
    if id >= size {
        return Err(Error::validation(format!("code {id} outside book of {size}")));
    }
    let mut rest = id;
    Ok(levels
        .iter()
        .map(|&l| {
            let i = rest % l;
            rest /= l;
            i
        })
        .collect())
}

pub fn fsq_encode(z: &[f64], book: &Codebook) -> Result<(usize, Vec<f64>)> {
    let Codebook::Fsq { levels } = book else {
        return Err(Error::validation("fsq_encode needs an FSQ codebook"));
    };
    check_vec(z, levels.len())?;
    let idx: Vec<usize> = z.iter().zip(levels).map(|(&v, &l)| fsq_level(v, l)).collect();
    let zq = idx.iter().zip(levels).map(|(&i, &l)| fsq_level_value(i, l)).collect();
    Ok((fsq_levels_to_id(&idx, levels)?, zq))
}

/// Result of quantizing the rows of a graph node.
#[derive(Debug, Clone)]
pub struct Quantized {
    /// Straight-through output: value `z_q`, gradient to `z` (FSQ) or the
    /// selected codeword rows plus the straight-through path (VQ).
    pub out: Var,
    pub ids: Vec<usize>,
    pub codebook_loss: Option<Var>,
    pub commit_loss: Option<Var>,
}

/// FSQ over the rows of `z` (K × C).
pub fn fsq_graph(g: &mut Graph, z: Var, book: &Codebook) -> Result<Quantized> {
    let (k, c) = g.shape(z);
    if c != book.dim() {
        return Err(Error::dim(format!("FSQ input width {c}, codebook width {}", book.dim())));
    }
    let zv = g.value(z).clone();
    let mut ids = Vec::with_capacity(k);
    let mut q = Mat::zeros(k, c);
    for r in 0..k {
        let (id, v) = fsq_encode(zv.row(r), book)?;
        ids.push(id);
        q.row_mut(r).copy_from_slice(&v);
    }
    Ok(Quantized {
        out: g.straight_through(q, z),
        ids,
        codebook_loss: None,
        commit_loss: None,
    })
}

/// VQ over the rows of `z`, with the codebook as the graph node `entries`
/// (N × D, usually a parameter).
pub fn vq_graph(g: &mut Graph, z: Var, entries: Var) -> Result<Quantized> {
    let (k, d) = g.shape(z);
    let book = Codebook::vq(g.value(entries).clone())?;
    if d != book.dim() {
        return Err(Error::dim(format!("VQ input width {d}, codebook width {}", book.dim())));
    }
    let zv = g.value(z).clone();
    let mut ids = Vec::with_capacity(k);
    for r in 0..k {
        ids.push(vq_encode(zv.row(r), &book)?.0);
    }
    let zq = g.gather_rows(entries, &ids);
    let (codebook, commit) = vq_losses_graph(g, z, zq);
    let value = g.value(zq).clone();
    Ok(Quantized {
        out: g.straight_through(value, z),
        ids,
        codebook_loss: Some(codebook),
        commit_loss: Some(commit),
    })
}

/// Per-frame classes: 0 for transition frames, `1 + code` at keyframes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub length: usize,
    pub classes: Vec<u32>,
    pub codebook_kind: CodebookKind,
    pub codebook_size: usize,
}

impl TokenSequence {
    pub fn new(classes: Vec<u32>, codebook_kind: CodebookKind, codebook_size: usize) -> Result<Self> {
        let t = TokenSequence {
            length: classes.len(),
            classes,
            codebook_kind,
            codebook_size,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() != self.length {
            return Err(Error::validation(format!(
                "length {} but {} classes",
                self.length,
                self.classes.len()
            )));
        }
        if let Some(&c) = self.classes.iter().find(|&&c| c as usize > self.codebook_size) {
            return Err(Error::validation(format!(
                "class {c} exceeds codebook size {}",
                self.codebook_size
            )));
        }
        Ok(())
    }

    pub fn keyframe_indices(&self) -> Vec<usize> {
        (0..self.length).filter(|&t| self.classes[t] > 0).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: TokenSequence = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
