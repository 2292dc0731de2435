//! Metric suites on a noisy copy of synthetic reference motion.

use rand::Rng as _;
use sfms::data::{MotionSequence, SynthSpec};
use sfms::metrics::{l2l_suite, react_suite};
use sfms::trainer::synth_suite;
use sfms::Mat;

fn noisy(seqs: &[MotionSequence], scale: f64, seed: u64) -> Vec<MotionSequence> {
    let mut r = sfms::rng::stream(seed, "example-noise", 0);
    seqs.iter()
        .map(|s| {
            let frames = Mat::from_fn(s.len(), s.dims(), |t, j| s.frames.get(t, j) + scale * r.gen_range(-1.0..1.0));
            MotionSequence::new(frames, s.fps, s.schema).unwrap()
        })
        .collect()
}

fn main() -> sfms::Result<()> {
    let spec = SynthSpec {
        frames: 96,
        ..Default::default()
    };
    let gt = synth_suite(&spec, 12, 1)?;
    let speaker = synth_suite(&spec, 12, 2)?;

    for scale in [0.0, 0.05, 0.2] {
        let r = l2l_suite(&noisy(&gt, scale, 3), &gt, &speaker, 0)?;
        println!("l2l noise {scale}");
        for m in &r.metrics {
            println!("  {:<20} {:.5}{}", m.name, m.value, if m.degenerate { " (degenerate)" } else { "" });
        }
    }

    let gens: Vec<Vec<MotionSequence>> = (0..3).map(|k| noisy(&gt, 0.1, 10 + k)).collect();
    let r = react_suite(&gens, &gt, &speaker)?;
    println!("react, three generations per context");
    for m in &r.metrics {
        println!("  {:<8} {:.5}", m.name, m.value);
    }
    Ok(())
}
