use sfms::data::{MotionSequence, SynthSpec};
use sfms::inpainter::{Architecture, Placement, ReconConfig, ReconModel};
use sfms::nn::ModelDims;
use sfms::rng;
use sfms::trainer::{
    parse_flat_config, synth_suite, train_recon, ReconLossReport, SparsityAblationConfig, TrainCheckpoint, TrainConfig,
    TrainOptions, FINAL_CHECKPOINT, LOG_FILE,
};

fn tiny_dims() -> ModelDims {
    ModelDims {
        model_dim: 8,
        heads: 2,
        layers: 1,
        ffn_dim: 16,
    }
}

fn model(placement: Placement, architecture: Architecture) -> ReconModel {
    ReconModel::new(ReconConfig {
        input_dim: 4,
        frames: 16,
        k: 3,
        dims: tiny_dims(),
        scorer_dims: tiny_dims(),
        placement,
        architecture,
        ..Default::default()
    })
    .unwrap()
}

fn data() -> Vec<MotionSequence> {
    let spec = SynthSpec {
        frames: 16,
        dims: 4,
        events: 2,
        ..Default::default()
    };
    synth_suite(&spec, 6, 3).unwrap()
}

fn cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 2,
        samples_per_seq: 2,
        seed: 11,
        ..Default::default()
    }
}

fn run(m: &ReconModel, c: &TrainConfig, opts: TrainOptions) -> sfms::trainer::TrainOutcome {
    train_recon(m, &data(), c, &SparsityAblationConfig::default(), opts).unwrap()
}

#[test]
fn zero_steps_returns_the_initialisation() {
    let m = model(Placement::Dynamic, Architecture::Sparse);
    let out = run(&m, &cfg(0), TrainOptions::default());
    assert!(out.log.is_empty());
    assert_eq!(out.params(), &m.init(rng::derive(11, "init", 0)));
}

#[test]
fn identical_seeds_give_identical_logs_and_checkpoints() {
    let m = model(Placement::Dynamic, Architecture::Sparse);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let opts = TrainOptions {
            out_dir: Some(d.path().to_path_buf()),
            ..Default::default()
        };
        run(&m, &cfg(6), opts);
    }
    for name in [LOG_FILE, FINAL_CHECKPOINT] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let other = run(&m, &TrainConfig { seed: 12, ..cfg(6) }, TrainOptions::default());
    let first = run(&m, &cfg(6), TrainOptions::default());
    assert_ne!(other.log, first.log);
}

#[test]
fn resuming_from_a_checkpoint_continues_the_same_run() {
    let m = model(Placement::Dynamic, Architecture::Sparse);
    let full = run(&m, &cfg(8), TrainOptions::default());
    let half = run(
        &m,
        &cfg(8),
        TrainOptions {
            stop_after: Some(4),
            ..Default::default()
        },
    );
    assert_eq!(half.checkpoint.step, 4);
    let rest = run(
        &m,
        &cfg(8),
        TrainOptions {
            resume: Some(half.checkpoint.clone()),
            ..Default::default()
        },
    );
    assert_eq!(rest.log, full.log[4..]);
    assert_eq!(rest.checkpoint, full.checkpoint);
}

#[test]
fn checkpoint_files_round_trip() {
    let m = model(Placement::Dynamic, Architecture::Sparse);
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    run(&m, &TrainConfig { checkpoint_every: 2, ..cfg(4) }, opts);
    let path = dir.path().join("ckpt_000002.sfck");
    let ck = TrainCheckpoint::read(&path).unwrap();
    assert_eq!(ck.step, 2);
    let again = dir.path().join("again.sfck");
    ck.write(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn every_logged_report_satisfies_the_ledger_identity() {
    for (p, a) in [
        (Placement::Dynamic, Architecture::Sparse),
        (Placement::Static, Architecture::Sparse),
        (Placement::Static, Architecture::Dense),
    ] {
        let out = run(&model(p, a), &cfg(5), TrainOptions::default());
        for e in &out.log {
            assert!(e.report.is_consistent(), "{p:?} {a:?} step {}", e.step);
        }
    }
}

#[test]
fn total_is_affine_in_alpha() {
    let at = |alpha: f64| ReconLossReport::compose(0.3, 0.0, 0.0, 2.5, alpha, None).total;
    assert_eq!(at(0.0), 0.3);
    assert!(((at(2.0) - at(1.0)) - 2.5).abs() < 1e-12);
    assert!(((at(1.0) - at(0.0)) - 2.5).abs() < 1e-12);
}

#[test]
fn zero_logits_rate_freezes_the_scorer() {
    let m = model(Placement::Dynamic, Architecture::Sparse);
    let init = m.init(rng::derive(11, "init", 0));
    let c = TrainConfig { lr_logits: 0.0, ..cfg(2) };
    let out = run(&m, &c, TrainOptions::default());
    for (name, v) in init.iter() {
        let after = out.params().get(name).unwrap();
        if name.starts_with("scorer.") {
            assert_eq!(after, v, "{name}");
        }
    }
    let c = TrainConfig { lr_main: 0.0, ..cfg(2) };
    let out = run(&m, &c, TrainOptions::default());
    for (name, v) in init.iter() {
        if !name.starts_with("scorer.") {
            assert_eq!(out.params().get(name).unwrap(), v, "{name}");
        }
    }
}

#[test]
fn temperature_reaches_its_end_value() {
    let c = cfg(40);
    let s = c.tau_schedule();
    let taus: Vec<f64> = (0..40).map(|i| s.tau(i)).collect();
    assert!(taus.windows(2).all(|w| w[1] <= w[0]));
    assert!((taus[39] - c.tau.tau_end).abs() < 1e-12);
}

#[test]
fn wrong_width_data_is_rejected() {
    let m = model(Placement::Static, Architecture::Sparse);
    let bad = synth_suite(
        &SynthSpec {
            frames: 16,
            dims: 5,
            events: 1,
            ..Default::default()
        },
        2,
        0,
    )
    .unwrap();
    assert!(train_recon(&m, &bad, &cfg(1), &SparsityAblationConfig::default(), TrainOptions::default()).is_err());
}

#[test]
fn flat_config_reports_missing_and_unknown_keys() {
    let c = parse_flat_config("data_dir = x\n# comment\nsteps = 3\n").unwrap();
    assert_eq!(c.require::<usize>("steps").unwrap(), 3);
    assert!(c.require::<usize>("batch").unwrap_err().to_string().contains("batch"));
    assert!(parse_flat_config("steps 3").is_err());
}
