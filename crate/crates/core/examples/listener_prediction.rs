//! Tokenize the listener side of synthetic dyads, train the next-token
//! predictor on those tracks and roll it out on a held-out conversation.
//!
//! `cargo run --release --example listener_prediction -- 1000` trains longer.

use sfms::data::{make_dyad, SynthDyadSpec};
use sfms::inpainter::{ReconConfig, ReconModel};
use sfms::nn::ModelDims;
use sfms::predictor::{rollout, tokenize_listener, Predictor, PredictorConfig, RolloutMode, PAST};
use sfms::trainer::{extract_windows, train_predictor, train_recon, PredTrainConfig, TrainConfig, TrainOptions};

fn main() -> sfms::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let spec = SynthDyadSpec::default();
    let dyads = (0..16).map(|i| make_dyad(&spec, i)).collect::<sfms::Result<Vec<_>>>()?;
    let held_out = make_dyad(&spec, 1000)?;

    let dims = ModelDims {
        model_dim: 32,
        heads: 4,
        layers: 1,
        ffn_dim: 64,
    };
    let tokenizer = ReconModel::new(ReconConfig {
        input_dim: spec.speaker.dims,
        k: 4,
        fsq_levels: vec![3, 3],
        dims,
        scorer_dims: dims,
        ..Default::default()
    })?;
    let mut windows = Vec::new();
    for d in &dyads {
        let l = &d.context.listener;
        for s in (0..=l.len() - tokenizer.config.frames).step_by(8) {
            windows.push(l.window(s, tokenizer.config.frames)?);
        }
    }
    let cfg = TrainConfig {
        steps,
        batch: 4,
        lr_logits: 3e-3,
        ..Default::default()
    };
    let tok_run = train_recon(&tokenizer, &windows, &cfg, &Default::default(), TrainOptions::default())?;
    let tok_params = tok_run.params();

    let tracks = dyads
        .iter()
        .map(|d| Ok((d.context.clone(), tokenize_listener(&tokenizer, tok_params, &d.context.listener)?)))
        .collect::<sfms::Result<Vec<_>>>()?;
    let predictor = Predictor::new(PredictorConfig {
        codebook_size: tokenizer.config.codebook_size(),
        speaker_dim: spec.speaker.dims,
        dims,
        ..Default::default()
    })?;
    let mut pcfg =
        PredTrainConfig::for_vocabulary(predictor.config.codebook_size + 1, tokenizer.config.frames, tokenizer.config.k);
    pcfg.steps = steps;
    let pred_run = train_predictor(&predictor, &extract_windows(&tracks, 4)?, &pcfg, TrainOptions::default())?;

    let truth = tokenize_listener(&tokenizer, tok_params, &held_out.context.listener)?;
    let out = rollout(
        &predictor,
        pred_run.params(),
        &tokenizer,
        tok_params,
        &held_out.context,
        &truth.classes[..PAST],
        64,
        RolloutMode::Greedy,
        0,
    )?;
    println!("true      {:?}", &truth.classes[PAST..PAST + 64]);
    println!("predicted {:?}", out.tokens.classes);
    println!("decoded {} frames x {} channels", out.motion.len(), out.motion.dims());
    Ok(())
}
