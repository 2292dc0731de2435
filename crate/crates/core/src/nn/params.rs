use std::collections::BTreeMap;

use rand::Rng as _;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Mat;

/// Named parameter tensors, ordered by path.
///
/// Values are always representable as `f32` after initialization and after
/// every optimizer step, so a checkpoint written with 32-bit floats reloads
/// bit-identically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(tensors: BTreeMap<String, Mat>) -> Self {
        Self { tensors }
    }

    pub fn into_map(self) -> BTreeMap<String, Mat> {
        self.tensors
    }

    pub fn map(&self) -> &BTreeMap<String, Mat> {
        &self.tensors
    }

    pub fn insert(&mut self, name: impl Into<String>, m: Mat) {
        let mut m = m;
        m.round_f32();
        self.tensors.insert(name.into(), m);
    }

    /// Insert without rounding; used by gradient checks that perturb in f64.
    pub fn insert_exact(&mut self, name: impl Into<String>, m: Mat) {
        self.tensors.insert(name.into(), m);
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.tensors.iter()
    }

    /// Names of tensors holding NaN or infinite entries.
    pub fn non_finite(&self) -> Vec<String> {
        self.tensors
            .iter()
            .filter(|(_, m)| !m.is_finite())
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Mat::len).sum()
    }

    /// Bring a parameter into `g`. Panics on a missing name; model code only
    /// asks for names its own `init` created.
    pub fn var(&self, g: &mut Graph, name: &str) -> Var {
        let m = self
            .tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not initialized"));
        g.param(name, m)
    }

    pub fn init_uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64, rng: &mut Rng) {
        let m = Mat::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound));
        self.insert(name, m);
    }

    pub fn init_xavier(&mut self, name: &str, rows: usize, cols: usize, rng: &mut Rng) {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        self.init_uniform(name, rows, cols, bound, rng);
    }

    pub fn init_const(&mut self, name: &str, rows: usize, cols: usize, v: f64) {
        self.insert(name, Mat::filled(rows, cols, v));
    }

    /// Set every tensor whose path starts with `prefix` and ends with `suffix` to zero.
    pub fn zero_matching(&mut self, prefix: &str, suffix: &str) -> usize {
        let mut n = 0;
        for (k, v) in self.tensors.iter_mut() {
            if k.starts_with(prefix) && k.ends_with(suffix) {
                *v = Mat::zeros(v.rows(), v.cols());
                n += 1;
            }
        }
        n
    }

    /// Merge another store in, prefixing its names.
    pub fn absorb(&mut self, prefix: &str, other: ParamStore) {
        for (k, v) in other.tensors {
            self.tensors.insert(format!("{prefix}{k}"), v);
        }
    }

    /// Sub-store of tensors under `prefix`, with the prefix stripped.
    pub fn extract(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }
}
