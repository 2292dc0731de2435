//! Soft dynamic time warping over squared Euclidean frame costs.

use crate::error::{Error, Result};
use crate::tensor::Mat;

fn cost(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols() != b.cols() {
        return Err(Error::dim(format!("sequence widths {} and {}", a.cols(), b.cols())));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::validation("soft-DTW needs non-empty sequences"));
    }
    Ok(Mat::from_fn(a.rows(), b.rows(), |i, j| {
        a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum()
    }))
}

/// `-γ log Σ exp(-x/γ)`; plain minimum at γ = 0.
fn soft_min(vals: [f64; 3], gamma: f64) -> f64 {
    let m = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if gamma == 0.0 || m.is_infinite() {
        return m;
    }
    let s: f64 = vals.iter().map(|&v| (-(v - m) / gamma).exp()).sum();
    m - gamma * s.ln()
}

/// Accumulated-cost table with an infinite border, (T1+1)×(T2+1).
fn forward(c: &Mat, gamma: f64) -> Mat {
    let (n, m) = c.shape();
    let mut r = Mat::filled(n + 1, m + 1, f64::INFINITY);
    r.set(0, 0, 0.0);
    for i in 1..=n {
        for j in 1..=m {
            let v = c.get(i - 1, j - 1) + soft_min([r.get(i - 1, j - 1), r.get(i - 1, j), r.get(i, j - 1)], gamma);
            r.set(i, j, v);
        }
    }
    r
}

/// Soft-DTW value; `gamma = 0` is exact DTW.
pub fn soft_dtw(a: &Mat, b: &Mat, gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::validation(format!("gamma must be >= 0, got {gamma}")));
    }
    let c = cost(a, b)?;
    let r = forward(&c, gamma);
    Ok(r.get(a.rows(), b.rows()))
}

/// Soft-DTW value and its gradient with respect to `a` (`gamma > 0`).
pub fn soft_dtw_grad(a: &Mat, b: &Mat, gamma: f64) -> Result<(f64, Mat)> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::validation(format!("gradient needs gamma > 0, got {gamma}")));
    }
    let c = cost(a, b)?;
    let (n, m) = c.shape();
    let r = forward(&c, gamma);
    // expected alignment matrix via the backward recursion, padded
    let mut rr = Mat::filled(n + 2, m + 2, f64::NEG_INFINITY);
    for i in 1..=n {
        for j in 1..=m {
            rr.set(i, j, r.get(i, j));
        }
    }
    rr.set(n + 1, m + 1, r.get(n, m));
    let cc = |i: usize, j: usize| if i <= n && j <= m { c.get(i - 1, j - 1) } else { 0.0 };
    let mut e = Mat::zeros(n + 2, m + 2);
    e.set(n + 1, m + 1, 1.0);
    for i in (1..=n).rev() {
        for j in (1..=m).rev() {
            let w = |ii: usize, jj: usize| {
                let v = rr.get(ii, jj);
                if v == f64::NEG_INFINITY {
                    0.0
                } else {
                    ((v - rr.get(i, j) - cc(ii, jj)) / gamma).exp()
                }
            };
            let v = e.get(i + 1, j) * w(i + 1, j) + e.get(i, j + 1) * w(i, j + 1) + e.get(i + 1, j + 1) * w(i + 1, j + 1);
            e.set(i, j, v);
        }
    }
    let mut grad = Mat::zeros(n, a.cols());
    for i in 0..n {
        for j in 0..m {
            let eij = e.get(i + 1, j + 1);
            if eij == 0.0 {
                continue;
            }
            for k in 0..a.cols() {
                let g = grad.get(i, k) + eij * 2.0 * (a.get(i, k) - b.get(j, k));
                grad.set(i, k, g);
            }
        }
    }
    Ok((r.get(n, m), grad))
}

/// `sdtw(a, b) − (sdtw(a, a) + sdtw(b, b)) / 2`: zero when `a = b`.
pub fn soft_dtw_divergence(a: &Mat, b: &Mat, gamma: f64) -> Result<f64> {
    Ok(soft_dtw(a, b, gamma)? - 0.5 * (soft_dtw(a, a, gamma)? + soft_dtw(b, b, gamma)?))
}

/// Divergence value and gradient with respect to `a`.
pub fn soft_dtw_divergence_grad(a: &Mat, b: &Mat, gamma: f64) -> Result<(f64, Mat)> {
    let (ab, g_ab) = soft_dtw_grad(a, b, gamma)?;
    // sdtw(a, a) is symmetric in its arguments, so its total derivative is
    // twice the first-argument gradient; the half cancels the two.
    let (aa, g_aa) = soft_dtw_grad(a, a, gamma)?;
    let bb = soft_dtw(b, b, gamma)?;
    let grad = g_ab.zip_map(&g_aa, |x, y| x - y);
    Ok((ab - 0.5 * (aa + bb), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{numeric_grad, relative_error};

    #[test]
    fn identical_sequences_have_zero_dtw() {
        let a = Mat::col_vector(&[0.0, 1.0, 3.0, 2.0]);
        assert_eq!(soft_dtw(&a, &a, 0.0).unwrap(), 0.0);
        assert!(soft_dtw_divergence(&a, &a, 0.5).unwrap().abs() < 1e-12);
    }

    #[test]
    fn soft_min_never_exceeds_min() {
        let a = Mat::col_vector(&[0.0, 1.0, 0.5]);
        let b = Mat::col_vector(&[1.0, 0.2]);
        let exact = soft_dtw(&a, &b, 0.0).unwrap();
        let mut prev = exact;
        for gamma in [0.01, 0.1, 1.0] {
            let s = soft_dtw(&a, &b, gamma).unwrap();
            assert!(s <= prev + 1e-12);
            prev = s;
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let a = Mat::from_rows(&[vec![0.1, 0.5], vec![0.9, -0.2], vec![0.3, 0.3], vec![-0.4, 0.8]]);
        let b = Mat::from_rows(&[vec![0.0, 0.4], vec![1.0, 0.0], vec![-0.5, 0.6]]);
        for gamma in [0.1, 1.0] {
            let (_, g) = soft_dtw_grad(&a, &b, gamma).unwrap();
            let num = numeric_grad(&a, 1e-6, |x| soft_dtw(x, &b, gamma).unwrap());
            assert!(relative_error(&g, &num, 1e-8) < 1e-5);
            let (_, g) = soft_dtw_divergence_grad(&a, &b, gamma).unwrap();
            let num = numeric_grad(&a, 1e-6, |x| soft_dtw_divergence(x, &b, gamma).unwrap());
            assert!(relative_error(&g, &num, 1e-8) < 1e-5);
        }
    }
}
