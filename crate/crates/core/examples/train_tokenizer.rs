//! Train a small keyframe tokenizer on synthetic motion, then tokenize and
//! reconstruct an unseen sequence.
//!
//! `cargo run --release --example train_tokenizer -- 2000` trains longer.

use sfms::data::SynthSpec;
use sfms::inpainter::{reconstruct, ReconConfig, ReconModel};
use sfms::nn::ModelDims;
use sfms::trainer::{synth_suite, train_recon, TrainConfig, TrainOptions};

fn main() -> sfms::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let spec = SynthSpec::default();
    let train = synth_suite(&spec, 64, 1)?;
    let test = synth_suite(&spec, 8, 2)?;

    let dims = ModelDims {
        model_dim: 32,
        heads: 4,
        layers: 1,
        ffn_dim: 64,
    };
    let model = ReconModel::new(ReconConfig {
        input_dim: spec.dims,
        dims,
        scorer_dims: dims,
        ..Default::default()
    })?;
    let cfg = TrainConfig {
        steps,
        batch: 4,
        ..Default::default()
    };
    let out = train_recon(&model, &train, &cfg, &Default::default(), TrainOptions::default())?;
    for e in out.log.iter().step_by((steps / 10).max(1)) {
        println!("step {:>5}  motion {:.5}  tau {:.3}", e.step, e.report.motion_l2, e.tau);
    }

    let mse: f64 = test
        .iter()
        .map(|s| reconstruct(&model, out.params(), s).map(|r| r.mse))
        .sum::<sfms::Result<f64>>()?
        / test.len() as f64;
    let r = reconstruct(&model, out.params(), &test[0])?;
    println!("held-out mse {mse:.5}");
    println!("keyframes {:?}", r.indices);
    println!("tokens    {:?}", r.tokens.classes);
    Ok(())
}
