use std::collections::BTreeMap;

use crate::nn::ParamStore;
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total` steps.
pub fn cosine_lr(lr_max: f64, lr_min: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let p = (step.min(total)) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * p).cos())
}

/// AdamW over a subset of a [`ParamStore`] selected by name.
///
/// Moments and updated parameters are rounded to `f32` after each step so
/// the full optimizer state survives a 32-bit checkpoint unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    m: BTreeMap<String, Mat>,
    v: BTreeMap<String, Mat>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Apply one update to every parameter that has a gradient and passes `owns`.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &BTreeMap<String, Mat>,
        lr: f64,
        owns: impl Fn(&str) -> bool,
    ) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, g) in grads {
            if !owns(name) {
                continue;
            }
            let Some(p) = store.get_mut(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Mat::zeros(g.rows(), g.cols()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Mat::zeros(g.rows(), g.cols()));
            for i in 0..g.len() {
                let gi = g.data()[i];
                let mi = c.beta1 * m.data()[i] + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v.data()[i] + (1.0 - c.beta2) * gi * gi;
                let mi = mi as f32 as f64;
                let vi = vi as f32 as f64;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let pi = p.data()[i];
                let update = (mi / bc1) / ((vi / bc2).sqrt() + c.eps) + c.weight_decay * pi;
                p.data_mut()[i] = (pi - lr * update) as f32 as f64;
            }
        }
    }

    /// Moment tensors as checkpoint entries under `prefix`.
    pub fn state(&self, prefix: &str) -> BTreeMap<String, Mat> {
        let mut out = BTreeMap::new();
        for (k, m) in &self.m {
            out.insert(format!("{prefix}m/{k}"), m.clone());
        }
        for (k, v) in &self.v {
            out.insert(format!("{prefix}v/{k}"), v.clone());
        }
        out.insert(format!("{prefix}step"), Mat::scalar(self.step as f64));
        out
    }

    pub fn load_state(&mut self, prefix: &str, tensors: &BTreeMap<String, Mat>) {
        self.m.clear();
        self.v.clear();
        for (k, t) in tensors {
            if let Some(rest) = k.strip_prefix(prefix) {
                if let Some(name) = rest.strip_prefix("m/") {
                    self.m.insert(name.to_string(), t.clone());
                } else if let Some(name) = rest.strip_prefix("v/") {
                    self.v.insert(name.to_string(), t.clone());
                } else if rest == "step" {
                    self.step = t.scalar_value() as u64;
                }
            }
        }
    }
}

/// Rescale gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Mat>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
