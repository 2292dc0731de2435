//! Evaluation metrics for generated facial motion.
//!
//! Two families are provided: distances to observed motion (L2, FD, paired
//! FD, Shannon index, RPCC) and reaction-set statistics (FRCorr, FRDist,
//! FRDiv, FRDvs, FRVar, FRRea, FRSyn). Everything here is a pure function.

mod dtw;
mod report;

pub use dtw::{soft_dtw, soft_dtw_divergence, soft_dtw_divergence_grad, soft_dtw_grad};
pub use report::{
    l2l_suite, plot_heatmap, plot_lines, react_suite, write_csv, write_json, SuiteReport,
    L2L_SHANNON_K_EXPRESSION, L2L_SHANNON_K_POSE,
};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Mat;

/// Eigenvalues above this negative tolerance are clamped to zero; anything
/// lower marks the covariance product as degenerate.
pub const PSD_TOLERANCE: f64 = -1e-8;
pub const KMEANS_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    #[serde(default)]
    pub degenerate: bool,
    #[serde(default)]
    pub details: BTreeMap<String, serde_json::Value>,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        MetricReport {
            name: name.into(),
            value,
            degenerate: !value.is_finite(),
            details: BTreeMap::new(),
        }
    }

    pub fn flagged(mut self, degenerate: bool) -> Self {
        self.degenerate |= degenerate;
        self
    }

    pub fn with_detail(mut self, key: &str, v: impl Serialize) -> Self {
        self.details
            .insert(key.to_string(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null));
        self
    }
}

/// A scalar together with a degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flagged {
    pub value: f64,
    pub degenerate: bool,
}

fn same_shape(a: &Mat, b: &Mat) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.rows() == 0 {
        return Err(Error::validation("empty input"));
    }
    Ok(())
}

/// Mean per-frame Euclidean distance.
pub fn l2_to_gt(gen: &Mat, gt: &Mat) -> Result<f64> {
    same_shape(gen, gt)?;
    let total: f64 = (0..gen.rows())
        .map(|t| {
            gen.row(t)
                .iter()
                .zip(gt.row(t))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / gen.rows() as f64)
}

fn moments(x: &Mat) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = x.shape();
    let mu = DMatrix::from_fn(d, 1, |j, _| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            let da = x.get(i, a) - mu[a];
            for b in a..d {
                cov[(a, b)] += da * (x.get(i, b) - mu[b]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    (mu, cov)
}

/// Symmetric square root with eigenvalue clamping; flags eigenvalues below
/// [`PSD_TOLERANCE`].
fn sqrt_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let degenerate = eig.eigenvalues.iter().any(|&l| l < PSD_TOLERANCE);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&roots) * v.transpose(), degenerate)
}

/// Fréchet distance between Gaussians fitted to the rows of `x` and `y`.
pub fn frechet(x: &Mat, y: &Mat) -> Result<Flagged> {
    if x.cols() != y.cols() || x.cols() == 0 {
        return Err(Error::dim(format!("feature widths {} and {}", x.cols(), y.cols())));
    }
    if x.rows() < 2 || y.rows() < 2 {
        return Err(Error::validation("frechet distance needs at least two samples per set"));
    }
    let (m1, s1) = moments(x);
    let (m2, s2) = moments(y);
    let mean_term = (&m1 - &m2).norm_squared();
    // Tr (Σ1 Σ2)^½ = Tr (Σ1^½ Σ2 Σ1^½)^½, and the latter is symmetric.
    let (r1, deg1) = sqrt_psd(&s1);
    let inner = &r1 * &s2 * &r1;
    let (root, deg2) = sqrt_psd(&inner);
    let value = mean_term + s1.trace() + s2.trace() - 2.0 * root.trace();
    Ok(Flagged {
        value: value.max(0.0),
        degenerate: deg1 || deg2 || !value.is_finite(),
    })
}

pub fn frechet_distance(x: &Mat, y: &Mat) -> Result<f64> {
    Ok(frechet(x, y)?.value)
}

/// Fréchet distance over listener features concatenated with the speaker's.
pub fn paired_fd(gen_l: &Mat, spk: &Mat, gt_l: &Mat) -> Result<f64> {
    same_shape(gen_l, gt_l)?;
    if spk.rows() != gen_l.rows() {
        return Err(Error::dim(format!("speaker has {} rows, listener {}", spk.rows(), gen_l.rows())));
    }
    frechet_distance(&Mat::concat_cols(&[gen_l, spk]), &Mat::concat_cols(&[gt_l, spk]))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means (k-means++ seeding, fixed iterations). Returns the cluster
/// of every row; ties go to the lower cluster id.
pub fn kmeans(x: &Mat, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::validation(format!("k = {k} needs 1..={n} samples")));
    }
    let mut r = rng::stream(seed, "kmeans", 0);
    let mut centers: Vec<Vec<f64>> = vec![x.row(r.gen_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = r.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            r.gen_range(0..n)
        };
        centers.push(x.row(pick).to_vec());
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centers.last().unwrap()));
        }
    }
    let assign = |centers: &[Vec<f64>]| -> Vec<usize> {
        (0..n)
            .map(|i| {
                let mut best = (0, f64::INFINITY);
                for (c, ctr) in centers.iter().enumerate() {
                    let d = sq_dist(x.row(i), ctr);
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                best.0
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..KMEANS_ITERATIONS {
        let mut sums = vec![vec![0.0; x.cols()]; k];
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            // empty clusters keep their previous centre
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(labels)
}

/// Entropy (nats) of the k-means cluster histogram.
pub fn shannon_index(x: &Mat, k: usize, seed: u64) -> Result<f64> {
    let labels = kmeans(x, k, seed)?;
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        + 0.0)
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n != b.len() || n < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Residual Pearson correlation: `|PCC(gen − gt, spk)|`.
pub fn rpcc(gen: &[f64], gt: &[f64], spk: &[f64]) -> Result<Flagged> {
    if gen.len() != gt.len() || gen.len() != spk.len() {
        return Err(Error::dim(format!("signal lengths {}, {}, {}", gen.len(), gt.len(), spk.len())));
    }
    let residual: Vec<f64> = gen.iter().zip(gt).map(|(a, b)| a - b).collect();
    Ok(match pearson(&residual, spk) {
        Some(r) => Flagged {
            value: r.abs(),
            degenerate: false,
        },
        None => Flagged {
            value: 0.0,
            degenerate: true,
        },
    })
}

/// Concordance correlation of one channel pair.
pub fn ccc_1d(x: &[f64], y: &[f64]) -> Result<Flagged> {
    let n = x.len();
    if n != y.len() || n == 0 {
        return Err(Error::dim(format!("signal lengths {} and {}", x.len(), y.len())));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let (cov, vx, vy) = (sxy / n as f64, sxx / n as f64, syy / n as f64);
    if vx == 0.0 && vy == 0.0 && x == y {
        return Ok(Flagged {
            value: 1.0,
            degenerate: false,
        });
    }
    if vx == 0.0 || vy == 0.0 {
        return Ok(Flagged {
            value: 0.0,
            degenerate: true,
        });
    }
    let v = 2.0 * cov / (vx + vy + (mx - my) * (mx - my));
    Ok(Flagged {
        value: v.clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Channel-averaged concordance correlation.
pub fn ccc(x: &Mat, y: &Mat) -> Result<Flagged> {
    same_shape(x, y)?;
    let mut sum = 0.0;
    let mut degenerate = false;
    for c in 0..x.cols() {
        let f = ccc_1d(&x.col(c), &y.col(c))?;
        sum += f.value;
        degenerate |= f.degenerate;
    }
    Ok(Flagged {
        value: sum / x.cols() as f64,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tlcc {
    pub peak_lag: i64,
    pub peak_correlation: f64,
    /// `(lag, correlation)` for every lag in `[-max_lag, max_lag]`.
    pub curve: Vec<(i64, f64)>,
}

/// Time-lagged cross correlation. At lag `L` the pairs are `(x[t], y[t+L])`,
/// so `y[t] = x[t−5]` peaks at `L = 5`. Lags whose overlap has zero
/// variance score 0. Ties go to the smallest `|L|`, then the negative lag.
pub fn tlcc(x: &[f64], y: &[f64], max_lag: usize) -> Result<Tlcc> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::dim(format!("signal lengths {} and {}", x.len(), y.len())));
    }
    if max_lag + 2 > n {
        return Err(Error::validation(format!("max_lag {max_lag} too large for {n} frames")));
    }
    let m = max_lag as i64;
    let curve: Vec<(i64, f64)> = (-m..=m)
        .map(|lag| {
            let (xs, ys) = if lag >= 0 {
                let l = lag as usize;
                (&x[..n - l], &y[l..])
            } else {
                let l = (-lag) as usize;
                (&x[l..], &y[..n - l])
            };
            (lag, pearson(xs, ys).unwrap_or(0.0))
        })
        .collect();
    let mut best = (0i64, f64::NEG_INFINITY);
    let mut order: Vec<&(i64, f64)> = curve.iter().collect();
    order.sort_by_key(|(l, _)| (l.abs(), *l));
    for &&(l, c) in &order {
        if c > best.1 {
            best = (l, c);
        }
    }
    Ok(Tlcc {
        peak_lag: best.0,
        peak_correlation: best.1,
        curve,
    })
}

fn mean_sq(a: &Mat, b: &Mat) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub fr_div: f64,
    pub fr_dvs: f64,
    pub fr_var: f64,
}

/// Diversity statistics over `gens[k][n]`, the k-th generation for context
/// n. Pairwise terms are per-element mean squared differences.
pub fn fr_diversity(gens: &[Vec<Mat>]) -> Result<Diversity> {
    let k = gens.len();
    let n = gens.first().map_or(0, Vec::len);
    if k == 0 || n == 0 || gens.iter().any(|g| g.len() != n) {
        return Err(Error::validation("generations must form a non-empty K×N grid"));
    }
    let shape = gens[0][0].shape();
    if gens.iter().flatten().any(|m| m.shape() != shape) {
        return Err(Error::dim("all generations must share one shape"));
    }
    let pair_mean = |items: &[&Mat]| -> f64 {
        let m = items.len();
        if m < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                s += mean_sq(items[i], items[j]);
            }
        }
        s / (m * (m - 1) / 2) as f64
    };
    let fr_div = (0..n)
        .map(|c| pair_mean(&gens.iter().map(|g| &g[c]).collect::<Vec<_>>()))
        .sum::<f64>()
        / n as f64;
    let fr_dvs = gens
        .iter()
        .map(|g| pair_mean(&g.iter().collect::<Vec<_>>()))
        .sum::<f64>()
        / k as f64;
    let (t, d) = shape;
    let fr_var = if t < 2 {
        0.0
    } else {
        gens.iter()
            .flatten()
            .map(|m| {
                (0..d)
                    .map(|c| {
                        let col = m.col(c);
                        let mu = col.iter().sum::<f64>() / t as f64;
                        col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (t - 1) as f64
                    })
                    .sum::<f64>()
                    / d as f64
            })
            .sum::<f64>()
            / (k * n) as f64
    };
    Ok(Diversity { fr_div, fr_dvs, fr_var })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterIntegrity {
    pub ratio_before: f64,
    pub ratio_after: f64,
    /// `ratio_after / ratio_before`.
    pub retention: f64,
    pub degenerate: bool,
}

/// Mean inter-centroid distance over mean distance of members to their
/// centroid.
fn separation_ratio(x: &Mat, labels: &[usize]) -> (f64, bool) {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let centroids: Vec<Vec<f64>> = ids
        .iter()
        .map(|&c| {
            let rows: Vec<usize> = (0..x.rows()).filter(|&i| labels[i] == c).collect();
            (0..x.cols())
                .map(|j| rows.iter().map(|&i| x.get(i, j)).sum::<f64>() / rows.len() as f64)
                .collect()
        })
        .collect();
    let mut inter = 0.0;
    let mut pairs = 0;
    for a in 0..centroids.len() {
        for b in a + 1..centroids.len() {
            inter += sq_dist(&centroids[a], &centroids[b]).sqrt();
            pairs += 1;
        }
    }
    let inter = inter / pairs as f64;
    let intra = (0..x.rows())
        .map(|i| {
            let c = ids.binary_search(&labels[i]).unwrap();
            sq_dist(x.row(i), &centroids[c]).sqrt()
        })
        .sum::<f64>()
        / x.rows() as f64;
    if intra == 0.0 {
        (f64::INFINITY, true)
    } else {
        (inter / intra, false)
    }
}

/// Cluster separation of `before` rows versus their encoded `after` rows.
pub fn cluster_integrity(before: &Mat, after: &Mat, labels: &[usize]) -> Result<ClusterIntegrity> {
    same_shape(before, after)?;
    if labels.len() != before.rows() {
        return Err(Error::dim(format!("{} labels for {} rows", labels.len(), before.rows())));
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::validation("cluster integrity needs at least two clusters"));
    }
    let (rb, db) = separation_ratio(before, labels);
    let (ra, da) = separation_ratio(after, labels);
    let retention = if rb.is_infinite() && ra.is_infinite() { 1.0 } else { ra / rb };
    Ok(ClusterIntegrity {
        ratio_before: rb,
        ratio_after: ra,
        retention,
        degenerate: db || da,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_unit_offset() {
        let a = Mat::zeros(5, 4);
        let b = Mat::filled(5, 4, 1.0);
        assert_eq!(l2_to_gt(&a, &b).unwrap(), 2.0);
        assert_eq!(l2_to_gt(&a, &a).unwrap(), 0.0);
        assert!(l2_to_gt(&a, &Mat::zeros(4, 4)).is_err());
    }

    #[test]
    fn ccc_shift_is_analytic() {
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        let c = 0.5;
        let y: Vec<f64> = x.iter().map(|v| v + c).collect();
        let mu = x.iter().sum::<f64>() / 10.0;
        let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 10.0;
        let want = 2.0 * var / (2.0 * var + c * c);
        assert!((ccc_1d(&x, &y).unwrap().value - want).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -(v - mu)).collect();
        let cen: Vec<f64> = x.iter().map(|v| v - mu).collect();
        assert!((ccc_1d(&cen, &neg).unwrap().value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ccc_constant_cases() {
        assert_eq!(ccc_1d(&[2.0; 4], &[2.0; 4]).unwrap().value, 1.0);
        let f = ccc_1d(&[2.0; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f.value, 0.0);
        assert!(f.degenerate);
    }

    #[test]
    fn rpcc_cases() {
        let gt = [0.1, 0.4, -0.2, 0.3, 0.0];
        let spk = [1.0, -0.5, 0.2, 0.8, -1.0];
        let r = rpcc(&gt, &gt, &spk).unwrap();
        assert_eq!(r.value, 0.0);
        let gen: Vec<f64> = gt.iter().zip(&spk).map(|(a, b)| a + b).collect();
        assert!((rpcc(&gen, &gt, &spk).unwrap().value - 1.0).abs() < 1e-12);
        let gen: Vec<f64> = gt.iter().zip(&spk).map(|(a, b)| a - 2.0 * b).collect();
        assert!((rpcc(&gen, &gt, &spk).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diversity_hand_case() {
        let a = Mat::from_rows(&[vec![0.0], vec![2.0]]);
        let b = Mat::from_rows(&[vec![1.0], vec![1.0]]);
        let d = fr_diversity(&[vec![a.clone()], vec![b.clone()]]).unwrap();
        assert_eq!(d.fr_div, 1.0);
        assert_eq!(d.fr_dvs, 0.0);
        // variances 2 and 0
        assert_eq!(d.fr_var, 1.0);
    }

    #[test]
    fn cluster_integrity_identity_and_collapse() {
        let x = Mat::from_rows(&[vec![0.0, 0.1], vec![0.2, 0.0], vec![5.0, 5.1], vec![5.2, 4.9]]);
        let labels = [0, 0, 1, 1];
        let id = cluster_integrity(&x, &x, &labels).unwrap();
        assert_eq!(id.retention, 1.0);
        let collapsed = Mat::from_rows(&[vec![0.1, 0.05], vec![0.1, 0.05], vec![5.1, 5.0], vec![5.1, 5.0]]);
        let c = cluster_integrity(&x, &collapsed, &labels).unwrap();
        assert!(c.ratio_after.is_infinite() && c.degenerate);
    }
}
