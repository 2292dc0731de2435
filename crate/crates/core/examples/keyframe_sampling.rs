//! Relaxed top-k keyframe sampling against the exact subset distribution.

use std::collections::BTreeMap;

use sfms::sampler::{gumbel_noise, soft_topk_mask, topk_set_probabilities, KeyframeScores};

fn main() -> sfms::Result<()> {
    let scores = KeyframeScores::new(vec![2.0, 1.0, 0.0, -1.0, -2.0])?;
    let k = 2;

    let m = soft_topk_mask(&scores, k, 0.5, &gumbel_noise(5, 1)?)?;
    println!("soft {:.3?}", m.soft);
    println!("hard {:?} -> indices {:?}", m.hard, m.indices);

    let draws = 20_000u64;
    let mut counts: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for seed in 0..draws {
        let m = soft_topk_mask(&scores, k, 1.0, &gumbel_noise(5, seed)?)?;
        *counts.entry(m.indices).or_default() += 1.0 / draws as f64;
    }
    println!("{:>8} {:>8} {:>8}", "subset", "exact", "sampled");
    for (set, p) in topk_set_probabilities(&scores, k)? {
        let q = counts.get(&set).copied().unwrap_or(0.0);
        println!("{:>8} {p:>8.4} {q:>8.4}", format!("{set:?}"));
    }
    Ok(())
}
