//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line. The training comparisons run full 5k-step budgets, so build with the
//! optimised test profile and expect several minutes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rand::Rng as _;
use sfms::autodiff::{numeric_grad, relative_error, Graph};
use sfms::data::{make_dyad, read_container, write_container, MotionSequence, SynthDyad, SynthDyadSpec, SynthSpec, MEL_BINS};
use sfms::inpainter::{reconstruct, Architecture, Placement, ReconConfig, ReconModel};
use sfms::metrics::{ccc, frechet_distance, soft_dtw, tlcc};
use sfms::nn::{EncoderStack, GatedFusion, ModelDims, ParamStore};
use sfms::predictor::{rollout, tokenize_listener, AudioInput, Predictor, PredictorConfig, RolloutMode, PAST};
use sfms::quantizer::{fsq_encode, fsq_level_value, vq_encode, Codebook, TokenSequence, DEFAULT_FSQ_LEVELS};
use sfms::rng;
use sfms::sampler::{gumbel_from_rng, gumbel_noise, soft_topk_jacobian, soft_topk_mask, topk_set_probabilities, KeyframeScores};
use sfms::trainer::{
    extract_windows, synth_suite, train_predictor, train_recon, PredTrainConfig, TrainCheckpoint, TrainConfig,
    TrainOptions, TrainOutcome, FINAL_CHECKPOINT, LOG_FILE,
};
use sfms::Mat;

fn verdict(n: usize, pass: bool, detail: &str) {
    println!("criterion {n}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn scores(v: &[f64]) -> KeyframeScores {
    KeyframeScores::new(v.to_vec()).unwrap()
}

#[test]
fn criterion_01_sampler_matches_plackett_luce() {
    let s = scores(&[2.0, 1.0, 0.0, -1.0, -2.0]);
    let exact = topk_set_probabilities(&s, 2).unwrap();
    let draws = 200_000u64;
    let mut counts: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for i in 0..draws {
        let noise = gumbel_from_rng(5, &mut rng::stream(1, "acceptance-sampler", i));
        let m = soft_topk_mask(&s, 2, 1.0, &noise).unwrap();
        *counts.entry(m.indices).or_insert(0.0) += 1.0 / draws as f64;
    }
    let keys: BTreeSet<_> = exact.keys().chain(counts.keys()).collect();
    let tv = 0.5
        * keys
            .into_iter()
            .map(|k| (exact.get(k).unwrap_or(&0.0) - counts.get(k).unwrap_or(&0.0)).abs())
            .sum::<f64>();
    let pass = tv < 0.01;
    verdict(1, pass, &format!("TV {tv:.5}"));
    assert!(pass);
}

fn rand_mat(r: usize, c: usize, seed: u64) -> Mat {
    let mut g = rng::stream(seed, "acceptance-mat", 0);
    Mat::from_fn(r, c, |_, _| g.gen_range(-1.0..1.0))
}

/// Relative error of the autodiff gradient of `loss` w.r.t. parameter `name`.
fn param_grad_error(store: &ParamStore, name: &str, loss: impl Fn(&ParamStore, &mut Graph) -> sfms::autodiff::Var) -> f64 {
    let mut g = Graph::new();
    let l = loss(store, &mut g);
    let grads = g.param_grads(&g.backward(l));
    let w = store.get(name).unwrap().clone();
    let num = numeric_grad(&w, 1e-6, |m| {
        let mut q = store.clone();
        q.insert_exact(name, m.clone());
        let mut g = Graph::new();
        let l = loss(&q, &mut g);
        g.value(l).scalar_value()
    });
    relative_error(&grads[name], &num, 1e-8)
}

#[test]
fn criterion_02_gradients_match_finite_differences() {
    let mut worst: Vec<(String, f64)> = Vec::new();

    let s = [0.3, -0.8, 1.1, 0.0, 0.6, -0.2, 0.9];
    let noise = gumbel_noise(s.len(), 17).unwrap();
    for tau in [0.5, 1.0, 2.0] {
        let jac = soft_topk_jacobian(&scores(&s), 3, tau, &noise).unwrap();
        let mut e: f64 = 0.0;
        for i in 0..s.len() {
            let num = numeric_grad(&Mat::row_vector(&s), 1e-4, |m| {
                soft_topk_mask(&scores(m.data()), 3, tau, &noise).unwrap().soft[i]
            });
            e = e.max(relative_error(&Mat::row_vector(jac.row(i)), &num, 1e-6));
        }
        worst.push((format!("soft mask tau {tau}"), e));
    }

    let dims = ModelDims {
        model_dim: 8,
        heads: 2,
        layers: 2,
        ffn_dim: 12,
    };
    let stack = EncoderStack::new("enc", dims);
    let mut p = ParamStore::new();
    stack.init(&mut p, &mut rng::stream(1, "init", 0));
    let (x, target) = (rand_mat(5, 8, 2), rand_mat(5, 8, 3));
    for name in ["enc.l0.attn.q.w", "enc.l1.ffn.inner.w"] {
        let e = param_grad_error(&p, name, |store, g| {
            let xv = g.constant(x.clone());
            let y = stack.forward(g, store, xv, None).unwrap();
            let t = g.constant(target.clone());
            let d = g.sub(y, t);
            let sq = g.mul(d, d);
            g.mean_all(sq)
        });
        worst.push((name.to_string(), e));
    }

    let fusion = GatedFusion::new("fuse", &dims);
    let mut p = ParamStore::new();
    fusion.init(&mut p, &mut rng::stream(2, "init", 0));
    p.insert_exact(fusion.alpha_name(), Mat::scalar(0.3));
    let (a, b) = (rand_mat(4, 8, 4), rand_mat(6, 8, 5));
    let fused = |store: &ParamStore, g: &mut Graph| {
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let o = fusion.forward(g, store, av, bv, None, None).unwrap();
        let sq = g.mul(o, o);
        g.sum_all(sq)
    };
    worst.push(("fusion gate".into(), param_grad_error(&p, &fusion.alpha_name(), fused)));

    let pred = Predictor::new(PredictorConfig {
        codebook_size: 9,
        speaker_dim: 8,
        audio: AudioInput::Mel,
        dims: ModelDims {
            layers: 1,
            ..dims
        },
        ..Default::default()
    })
    .unwrap();
    let store = pred.init(5);
    let mel = Mat::from_fn(16, MEL_BINS, |r, c| ((r * 31 + c * 7) % 23) as f64 * 0.05 - 0.5);
    let e = param_grad_error(&store, "pred.audio_conv.w", |s, g| {
        let v = g.constant(mel.clone());
        let out = pred.encode_audio_mel(g, s, v).unwrap();
        let sq = g.mul(out, out);
        g.sum_all(sq)
    });
    worst.push(("mel encoder".into(), e));

    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let pass = max < 1e-3;
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    verdict(2, pass, &detail.join(", "));
    assert!(pass);
}

#[test]
fn criterion_03_temperature_limits() {
    let s = scores(&[0.3, -0.8, 1.1, 0.0, 0.6, -0.2]);
    let mut cold: f64 = 0.0;
    let mut used = 0;
    for seed in 0..50 {
        let noise = gumbel_noise(6, seed).unwrap();
        // a near tie at the top-k boundary stays blurred at any finite temperature
        let mut perturbed: Vec<f64> = s.logits().iter().zip(&noise).map(|(a, b)| a + b).collect();
        perturbed.sort_by(|a, b| b.total_cmp(a));
        if perturbed[1] - perturbed[2] < 1e-2 {
            continue;
        }
        used += 1;
        let m = soft_topk_mask(&s, 2, 1e-3, &noise).unwrap();
        cold = m.soft.iter().zip(&m.hard).map(|(a, b)| (a - b).abs()).fold(cold, f64::max);
    }
    let (t, k) = (10, 3);
    let flat = scores(&vec![0.0; t]);
    let mut hot: f64 = 0.0;
    for seed in 0..50 {
        let m = soft_topk_mask(&flat, k, 1e6, &gumbel_noise(t, seed).unwrap()).unwrap();
        hot = m.soft.iter().map(|v| (v - k as f64 / t as f64).abs()).fold(hot, f64::max);
    }
    let pass = used > 40 && cold < 1e-3 && hot < 1e-2;
    verdict(3, pass, &format!("cold gap {cold:.1e} over {used} draws, hot gap {hot:.1e}"));
    assert!(pass);
}

#[test]
fn criterion_04_quantizer_oracles() {
    let mut r = rng::stream(4, "acceptance-vq", 0);
    let mut vq_ok = 0;
    for _ in 0..1000 {
        let n = r.gen_range(1..32);
        let d = r.gen_range(1..8);
        let entries = Mat::from_fn(n, d, |_, _| r.gen_range(-2.0..2.0));
        let z: Vec<f64> = (0..d).map(|_| r.gen_range(-2.0..2.0)).collect();
        let dist = |i: usize| (0..d).map(|j| (entries.get(i, j) - z[j]).powi(2)).sum::<f64>();
        let best = (0..n).fold(0, |b, i| if dist(i) < dist(b) { i } else { b });
        let (id, zq) = vq_encode(&z, &Codebook::vq(entries.clone()).unwrap()).unwrap();
        if id == best && zq == entries.row(best) {
            vq_ok += 1;
        }
    }

    let levels = DEFAULT_FSQ_LEVELS.to_vec();
    let book = Codebook::fsq(levels.clone()).unwrap();
    let mut reached = BTreeSet::new();
    let mut idempotent = true;
    let mut idx = vec![0usize; levels.len()];
    loop {
        let point: Vec<f64> = idx.iter().zip(&levels).map(|(&i, &l)| fsq_level_value(i, l)).collect();
        let (id, q) = fsq_encode(&point, &book).unwrap();
        idempotent &= q == point && fsq_encode(&q, &book).unwrap() == (id, q.clone());
        reached.insert(id);
        // odometer over the level grid
        let mut c = 0;
        while c < idx.len() && idx[c] + 1 == levels[c] {
            idx[c] = 0;
            c += 1;
        }
        if c == idx.len() {
            break;
        }
        idx[c] += 1;
    }
    let pass = vq_ok == 1000 && reached.len() == 256 && idempotent;
    verdict(
        4,
        pass,
        &format!("vq {vq_ok}/1000, fsq codes {}, idempotent {idempotent}", reached.len()),
    );
    assert!(pass);
}

fn standardised(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "acceptance-gauss", 0);
    let v: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let m = v.iter().sum::<f64>() / n as f64;
    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    v.iter().map(|x| (x - m) / s).collect()
}

fn dtw_exhaustive(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
    let c = (a[i] - b[j]).powi(2);
    if i + 1 == a.len() && j + 1 == b.len() {
        return c;
    }
    let mut best = f64::INFINITY;
    if i + 1 < a.len() {
        best = best.min(dtw_exhaustive(a, b, i + 1, j));
    }
    if j + 1 < b.len() {
        best = best.min(dtw_exhaustive(a, b, i, j + 1));
    }
    if i + 1 < a.len() && j + 1 < b.len() {
        best = best.min(dtw_exhaustive(a, b, i + 1, j + 1));
    }
    c + best
}

#[test]
fn criterion_05_metric_oracles() {
    let (m1, s1, m2, s2) = (1.5, 0.5, -0.25, 2.0);
    let x: Vec<f64> = standardised(500, 1).iter().map(|z| m1 + s1 * z).collect();
    let y: Vec<f64> = standardised(400, 2).iter().map(|z| m2 + s2 * z).collect();
    let fd = frechet_distance(&Mat::col_vector(&x), &Mat::col_vector(&y)).unwrap();
    let fd_err = (fd - ((m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2))).abs();

    let seq = Mat::from_fn(60, 3, |t, j| ((t * (j + 2)) as f64 * 0.21).sin());
    let self_ccc = ccc(&seq, &seq).unwrap().value;

    let driver = standardised(150, 3);
    let lagged: Vec<f64> = (0..150).map(|t| if t >= 5 { driver[t - 5] } else { 0.3 * t as f64 }).collect();
    let lag = tlcc(&driver, &lagged, 12).unwrap().peak_lag;

    let mut dtw_err: f64 = 0.0;
    for seed in 0..10 {
        let a = standardised(6, 10 + seed);
        let b = standardised(6, 30 + seed);
        let soft = soft_dtw(&Mat::col_vector(&a), &Mat::col_vector(&b), 1e-6).unwrap();
        dtw_err = dtw_err.max((soft - dtw_exhaustive(&a, &b, 0, 0)).abs());
    }
    let pass = fd_err < 1e-6 && self_ccc == 1.0 && lag == 5 && dtw_err < 1e-4;
    verdict(
        5,
        pass,
        &format!("fd err {fd_err:.1e}, ccc {self_ccc}, lag {lag}, dtw err {dtw_err:.1e}"),
    );
    assert!(pass);
}

const ABLATION_TRAIN: usize = 200;
const ABLATION_TEST: usize = 50;
const ABLATION_STEPS: usize = 5000;

fn bench_dims() -> ModelDims {
    ModelDims {
        model_dim: 32,
        heads: 4,
        layers: 1,
        ffn_dim: 64,
    }
}

struct Arm {
    mse: f64,
    run: TrainOutcome,
}

struct Ablation {
    dynamic: Arm,
    fixed: Arm,
    dense: Arm,
}

fn ablation_config() -> TrainConfig {
    TrainConfig {
        steps: ABLATION_STEPS,
        batch: 4,
        samples_per_seq: 8,
        lr_logits: 3e-3,
        seed: 0,
        ..Default::default()
    }
}

fn train_arm(placement: Placement, architecture: Architecture) -> Arm {
    let spec = SynthSpec::default();
    let train = synth_suite(&spec, ABLATION_TRAIN, 7).unwrap();
    let test = synth_suite(&spec, ABLATION_TEST, 99).unwrap();
    let model = ReconModel::new(ReconConfig {
        input_dim: spec.dims,
        frames: spec.frames,
        k: 7,
        dims: bench_dims(),
        scorer_dims: bench_dims(),
        placement,
        architecture,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(model.config.codebook_size(), 256);
    let run = train_recon(&model, &train, &ablation_config(), &Default::default(), TrainOptions::default()).unwrap();
    let mse = test.iter().map(|s| reconstruct(&model, run.params(), s).unwrap().mse).sum::<f64>() / test.len() as f64;
    Arm { mse, run }
}

fn ablation() -> &'static Ablation {
    static CELL: OnceLock<Ablation> = OnceLock::new();
    CELL.get_or_init(|| Ablation {
        dynamic: train_arm(Placement::Dynamic, Architecture::Sparse),
        fixed: train_arm(Placement::Static, Architecture::Sparse),
        dense: train_arm(Placement::Static, Architecture::Dense),
    })
}

#[test]
fn criterion_06_dynamic_beats_static_placement() {
    let a = ablation();
    let ratio = a.dynamic.mse / a.fixed.mse;
    let pass = ratio <= 0.7;
    verdict(
        6,
        pass,
        &format!("dynamic {:.5}, static {:.5}, ratio {ratio:.3}", a.dynamic.mse, a.fixed.mse),
    );
    assert!(pass);
}

#[test]
fn criterion_07_sparse_beats_dense_tokens() {
    let a = ablation();
    let pass = a.dynamic.mse < a.dense.mse;
    verdict(7, pass, &format!("sparse {:.5}, dense {:.5}", a.dynamic.mse, a.dense.mse));
    assert!(pass);
}

#[test]
fn criterion_10_loss_ledger_holds_for_every_step() {
    let a = ablation();
    let mut checked = 0;
    let mut broken = 0;
    for arm in [&a.dynamic, &a.fixed, &a.dense] {
        assert_eq!(arm.run.log.len(), ABLATION_STEPS);
        for e in &arm.run.log {
            let r = &e.report;
            let total = r.motion_l2 + r.quant_codebook + r.quant_commit + r.alpha * r.mask_loss;
            let non_negative = [r.motion_l2, r.quant_codebook, r.quant_commit, r.mask_loss].iter().all(|&v| v >= 0.0);
            if total.to_bits() != r.total.to_bits() || !non_negative || !r.is_consistent() {
                broken += 1;
            }
            checked += 1;
        }
    }
    let pass = broken == 0;
    verdict(10, pass, &format!("{checked} reports, {broken} broken"));
    assert!(pass);
}

fn dyad_tokenizer() -> ReconModel {
    ReconModel::new(ReconConfig {
        input_dim: 8,
        frames: 48,
        k: 4,
        fsq_levels: vec![3, 3],
        dims: bench_dims(),
        scorer_dims: bench_dims(),
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn criterion_08_listener_predictor_on_lagged_dyads() {
    let spec = SynthDyadSpec::default();
    let dyads = |seeds: std::ops::Range<u64>| seeds.map(|i| make_dyad(&spec, i).unwrap()).collect::<Vec<SynthDyad>>();
    let (train, held_out) = (dyads(0..32), dyads(1000..1008));

    let tokenizer = dyad_tokenizer();
    let mut windows = Vec::new();
    for d in &train {
        let l = &d.context.listener;
        for s in (0..=l.len() - 48).step_by(8) {
            windows.push(l.window(s, 48).unwrap());
        }
    }
    let tcfg = TrainConfig {
        steps: 1000,
        batch: 4,
        lr_logits: 1e-3,
        ..Default::default()
    };
    let tok_run = train_recon(&tokenizer, &windows, &tcfg, &Default::default(), TrainOptions::default()).unwrap();
    let tok = tok_run.params();
    let track = |d: &SynthDyad| (d.context.clone(), tokenize_listener(&tokenizer, tok, &d.context.listener).unwrap());

    let pred = Predictor::new(PredictorConfig {
        codebook_size: 9,
        speaker_dim: 8,
        audio: AudioInput::Mel,
        dims: bench_dims(),
        ..Default::default()
    })
    .unwrap();
    let train_windows = extract_windows(&train.iter().map(track).collect::<Vec<_>>(), 4).unwrap();
    let mut pcfg = PredTrainConfig::for_vocabulary(10, tokenizer.config.frames, tokenizer.config.k);
    pcfg.steps = 1000;
    let pred_run = train_predictor(&pred, &train_windows, &pcfg, TrainOptions::default()).unwrap();
    let params = pred_run.params();

    let (mut hits, mut total, mut kf, mut kf_hits) = (0usize, 0usize, 0usize, 0usize);
    for w in extract_windows(&held_out.iter().map(track).collect::<Vec<_>>(), 8).unwrap() {
        let logits = pred.predict_logits(params, &w.batch).unwrap();
        for (j, &target) in w.batch.target().iter().enumerate() {
            let row = logits.row(j);
            let guess = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b }) as u32;
            total += 1;
            hits += (guess == target) as usize;
            if target > 0 {
                kf += 1;
                kf_hits += (guess == target) as usize;
            }
        }
    }
    let accuracy = hits as f64 / total as f64;
    let recall = kf_hits as f64 / kf.max(1) as f64;

    let long = SynthDyadSpec {
        speaker: SynthSpec {
            frames: PAST + 216,
            events: 11,
            ..spec.speaker.clone()
        },
        ..spec.clone()
    };
    let ctx = make_dyad(&long, 2000).unwrap().context;
    let prefix = tokenize_listener(&tokenizer, tok, &ctx.listener).unwrap().classes[..PAST].to_vec();
    let roll = rollout(&pred, params, &tokenizer, tok, &ctx, &prefix, 200, RolloutMode::Greedy, 0).unwrap();
    let valid = roll.tokens.length == 200
        && roll.tokens.classes.iter().all(|&c| c as usize <= pred.config.codebook_size)
        && roll.tokens.validate().is_ok();
    let finite = roll.motion.len() == 200 && roll.motion.frames.is_finite();

    let pass = accuracy >= 0.9 && recall >= 0.5 && valid && finite;
    verdict(
        8,
        pass,
        &format!(
            "accuracy {accuracy:.3}, recall {recall:.3} over {kf} keyframes, rollout valid {valid}, finite {finite}"
        ),
    );
    assert!(pass);
}

fn small_run(dir: &std::path::Path, seed: u64) {
    let spec = SynthSpec {
        frames: 16,
        dims: 4,
        events: 2,
        ..Default::default()
    };
    let data = synth_suite(&spec, 6, 3).unwrap();
    let dims = ModelDims {
        model_dim: 8,
        heads: 2,
        layers: 1,
        ffn_dim: 16,
    };
    let model = ReconModel::new(ReconConfig {
        input_dim: 4,
        frames: 16,
        k: 3,
        dims,
        scorer_dims: dims,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        steps: 20,
        batch: 2,
        samples_per_seq: 2,
        seed,
        checkpoint_every: 10,
        ..Default::default()
    };
    let opts = TrainOptions {
        out_dir: Some(dir.to_path_buf()),
        ..Default::default()
    };
    train_recon(&model, &data, &cfg, &Default::default(), opts).unwrap();
}

#[test]
fn criterion_09_determinism_and_round_trips() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    small_run(dirs[0].path(), 5);
    small_run(dirs[1].path(), 5);
    small_run(dirs[2].path(), 6);
    let bytes = |i: usize, f: &str| std::fs::read(dirs[i].path().join(f)).unwrap();
    let same_seed = bytes(0, LOG_FILE) == bytes(1, LOG_FILE) && bytes(0, FINAL_CHECKPOINT) == bytes(1, FINAL_CHECKPOINT);
    let other_seed = bytes(0, LOG_FILE) != bytes(2, LOG_FILE);

    let ck_path = dirs[0].path().join("ckpt_000010.sfck");
    let ck = TrainCheckpoint::read(&ck_path).unwrap();
    let again = dirs[0].path().join("again.sfck");
    ck.write(&again).unwrap();
    let ck_round = std::fs::read(&ck_path).unwrap() == std::fs::read(&again).unwrap()
        && TrainCheckpoint::read(&again).unwrap() == ck;

    let seq = synth_suite(&SynthSpec::default(), 1, 8).unwrap().remove(0);
    let (a, b) = (dirs[1].path().join("a.sfmc"), dirs[1].path().join("b.sfmc"));
    write_container(&seq, &a).unwrap();
    let back: MotionSequence = read_container(&a).unwrap();
    write_container(&back, &b).unwrap();
    let sfmc_round = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap() && read_container(&b).unwrap() == back;

    let tokens = TokenSequence::new(vec![0, 3, 0, 0, 7], sfms::quantizer::CodebookKind::Fsq, 9).unwrap();
    let tok_round = TokenSequence::from_json(&tokens.to_json().unwrap()).unwrap() == tokens;

    let pass = same_seed && other_seed && ck_round && sfmc_round && tok_round;
    verdict(
        9,
        pass,
        &format!(
            "same seed identical {same_seed}, other seed differs {other_seed}, checkpoint {ck_round}, sfmc {sfmc_round}, tokens {tok_round}"
        ),
    );
    assert!(pass);
}
