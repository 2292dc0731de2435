//! Metric suites, report files and figures.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{
    ccc, fr_diversity, frechet, l2_to_gt, paired_fd, rpcc, shannon_index, soft_dtw, tlcc, Flagged,
    MetricReport,
};
use crate::data::MotionSequence;
use crate::error::{Error, Result};
use crate::tensor::Mat;

pub const L2L_SHANNON_K_EXPRESSION: usize = 15;
pub const L2L_SHANNON_K_POSE: usize = 9;
const MAX_SYNC_LAG: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub metrics: Vec<MetricReport>,
}

impl SuiteReport {
    pub fn get(&self, name: &str) -> Option<&MetricReport> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).map(|m| m.value)
    }
}

fn check_pairs(a: &[MotionSequence], b: &[MotionSequence], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("{} generated vs {} {what} sequences", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::validation("no sequences to evaluate"));
    }
    let bad: Vec<String> = a
        .iter()
        .zip(b)
        .enumerate()
        .filter(|(_, (x, y))| x.len() != y.len() || (what == "ground-truth" && x.dims() != y.dims()))
        .map(|(i, (x, y))| format!("#{i}: {}x{} vs {}x{}", x.len(), x.dims(), y.len(), y.dims()))
        .collect();
    if !bad.is_empty() {
        return Err(Error::dim(format!("{what} mismatch: {}", bad.join("; "))));
    }
    Ok(())
}

fn pool(seqs: &[&MotionSequence], cols: Option<&[usize]>) -> Mat {
    let parts: Vec<Mat> = seqs
        .iter()
        .map(|s| match cols {
            Some(c) => Mat::from_fn(s.len(), c.len(), |t, j| s.frames.get(t, c[j])),
            None => s.frames.clone(),
        })
        .collect();
    Mat::concat_rows(&parts.iter().collect::<Vec<_>>())
}

fn flagged(name: &str, f: Flagged) -> MetricReport {
    MetricReport::new(name, f.value).flagged(f.degenerate)
}

fn shannon(name: &str, x: &Mat, k: usize, seed: u64) -> Result<MetricReport> {
    let k_eff = k.min(x.rows());
    Ok(MetricReport::new(name, shannon_index(x, k_eff, seed)?).with_detail("k", k_eff))
}

fn mean_rpcc(name: &str, triples: impl Iterator<Item = (Vec<f64>, Vec<f64>, Vec<f64>)>) -> Result<MetricReport> {
    let mut sum = 0.0;
    let mut n = 0;
    let mut degenerate = 0;
    for (g, t, s) in triples {
        let r = rpcc(&g, &t, &s)?;
        sum += r.value;
        n += 1;
        degenerate += r.degenerate as usize;
    }
    Ok(MetricReport::new(name, sum / n as f64)
        .flagged(degenerate == n)
        .with_detail("degenerate_pairs", degenerate))
}

/// Distances of generated listeners to the observed ones, pair by pair.
/// `seed` drives the k-means of the Shannon index.
pub fn l2l_suite(
    gen: &[MotionSequence],
    gt: &[MotionSequence],
    spk: &[MotionSequence],
    seed: u64,
) -> Result<SuiteReport> {
    check_pairs(gen, gt, "ground-truth")?;
    check_pairs(gen, spk, "speaker")?;
    let mut metrics = Vec::new();

    let l2: Vec<f64> = gen
        .iter()
        .zip(gt)
        .map(|(g, t)| l2_to_gt(&g.frames, &t.frames))
        .collect::<Result<_>>()?;
    metrics.push(MetricReport::new("l2", l2.iter().sum::<f64>() / l2.len() as f64).with_detail("per_sequence", &l2));

    let gen_refs: Vec<&MotionSequence> = gen.iter().collect();
    let gt_refs: Vec<&MotionSequence> = gt.iter().collect();
    let g_all = pool(&gen_refs, None);
    let t_all = pool(&gt_refs, None);
    let s_all = pool(&spk.iter().collect::<Vec<_>>(), None);
    metrics.push(flagged("fd", frechet(&g_all, &t_all)?));
    metrics.push(MetricReport::new("paired_fd", paired_fd(&g_all, &s_all, &t_all)?));

    let schema = gen[0].feature_schema();
    let expr: Vec<usize> = (0..schema.expression_dims).collect();
    let pose = schema.rotation_channels();
    metrics.push(shannon("shannon_expression", &pool(&gen_refs, Some(&expr)), L2L_SHANNON_K_EXPRESSION, seed)?);
    metrics.push(shannon("shannon_pose", &pool(&gen_refs, Some(&pose)), L2L_SHANNON_K_POSE, seed)?);

    let div = fr_diversity(&[gen.iter().map(|s| s.frames.clone()).collect::<Vec<_>>()]);
    // sequences of unequal length cannot share one grid
    if let Ok(d) = div {
        metrics.push(MetricReport::new("variation", d.fr_var));
    }

    metrics.push(mean_rpcc(
        "rpcc_expression",
        gen.iter()
            .zip(gt)
            .zip(spk)
            .map(|((g, t), s)| (g.lip_curvature(), t.lip_curvature(), s.lip_curvature())),
    )?);
    metrics.push(mean_rpcc(
        "rpcc_pose",
        gen.iter()
            .zip(gt)
            .zip(spk)
            .map(|((g, t), s)| (g.head_motion(), t.head_motion(), s.head_motion())),
    )?);
    Ok(SuiteReport {
        suite: "l2l".into(),
        metrics,
    })
}

fn sync_lag(spk: &MotionSequence, lis: &MotionSequence) -> Result<i64> {
    let max_lag = MAX_SYNC_LAG.min(spk.len().saturating_sub(2) / 2);
    Ok(tlcc(&spk.lip_curvature(), &lis.lip_curvature(), max_lag)?.peak_lag)
}

/// Reaction-set statistics over `gens[k][n]`, the k-th generated reaction to
/// context n.
pub fn react_suite(
    gens: &[Vec<MotionSequence>],
    gt: &[MotionSequence],
    spk: &[MotionSequence],
) -> Result<SuiteReport> {
    if gens.is_empty() {
        return Err(Error::validation("no generations"));
    }
    for g in gens {
        check_pairs(g, gt, "ground-truth")?;
    }
    check_pairs(gt, spk, "speaker")?;
    let kn = (gens.len() * gt.len()) as f64;
    let mut metrics = Vec::new();

    let mut corr = 0.0;
    let mut corr_deg = false;
    let mut dist = 0.0;
    let mut syn = 0.0;
    for g in gens {
        for ((a, b), s) in g.iter().zip(gt).zip(spk) {
            let c = ccc(&a.frames, &b.frames)?;
            corr += c.value;
            corr_deg |= c.degenerate;
            dist += soft_dtw(&a.frames, &b.frames, 0.0)?;
            syn += (sync_lag(s, a)? - sync_lag(s, b)?).abs() as f64;
        }
    }
    metrics.push(MetricReport::new("fr_corr", corr / kn).flagged(corr_deg));
    metrics.push(MetricReport::new("fr_dist", dist / kn));

    let grid: Vec<Vec<Mat>> = gens.iter().map(|g| g.iter().map(|s| s.frames.clone()).collect()).collect();
    if let Ok(d) = fr_diversity(&grid) {
        metrics.push(MetricReport::new("fr_div", d.fr_div));
        metrics.push(MetricReport::new("fr_dvs", d.fr_dvs));
        metrics.push(MetricReport::new("fr_var", d.fr_var));
    }

    let all_gen: Vec<&MotionSequence> = gens.iter().flatten().collect();
    let all_gt: Vec<&MotionSequence> = gt.iter().collect();
    metrics.push(flagged("fr_rea", frechet(&pool(&all_gen, None), &pool(&all_gt, None))?));
    metrics.push(MetricReport::new("fr_syn", syn / kn));
    Ok(SuiteReport {
        suite: "react".into(),
        metrics,
    })
}

pub fn write_json(report: &SuiteReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_csv(report: &SuiteReport, path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["suite", "name", "value", "degenerate"]).map_err(io)?;
    for m in &report.metrics {
        w.write_record([
            report.suite.as_str(),
            &m.name,
            &format!("{:?}", m.value),
            &m.degenerate.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })
}

/// Line chart of several series on shared axes.
pub fn plot_lines(path: &Path, series: &[Vec<f64>], width: u32, height: u32) -> Result<()> {
    let finite = series.iter().flatten().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    if len == 0 || !lo.is_finite() || width < 8 || height < 8 {
        return Err(Error::validation("nothing to plot"));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pad = 4.0;
    let (w, h) = (width as f64 - 2.0 * pad, height as f64 - 2.0 * pad);
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let to_px = |i: usize, v: f64| {
        let x = pad + w * i as f64 / (len.max(2) - 1) as f64;
        let y = pad + h * (1.0 - (v - lo) / span);
        (x, y)
    };
    for (s, vals) in series.iter().enumerate() {
        let color = Rgb(PALETTE[s % PALETTE.len()]);
        for i in 1..vals.len() {
            if !(vals[i - 1].is_finite() && vals[i].is_finite()) {
                continue;
            }
            let (x0, y0) = to_px(i - 1, vals[i - 1]);
            let (x1, y1) = to_px(i, vals[i]);
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for k in 0..=steps {
                let f = k as f64 / steps as f64;
                let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
                img.put_pixel((x.round() as u32).min(width - 1), (y.round() as u32).min(height - 1), color);
            }
        }
    }
    save(&img, path)
}

/// Heatmap with one cell per matrix entry (rows downwards), blue to red.
pub fn plot_heatmap(path: &Path, m: &Mat, cell: u32) -> Result<()> {
    if m.is_empty() || cell == 0 {
        return Err(Error::validation("nothing to plot"));
    }
    let (lo, hi) = m.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img = RgbImage::from_fn(m.cols() as u32 * cell, m.rows() as u32 * cell, |x, y| {
        let v = m.get((y / cell) as usize, (x / cell) as usize);
        let f = if v.is_finite() { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        Rgb([(255.0 * f) as u8, (80.0 * (1.0 - (2.0 * f - 1.0).abs())) as u8, (255.0 * (1.0 - f)) as u8])
    });
    save(&img, path)
}
