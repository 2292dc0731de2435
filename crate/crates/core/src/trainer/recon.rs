use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{mask_loss_graph, sparsity_loss_graph, ReconLossReport, SparsityAblationConfig, TrainConfig};
use crate::autodiff::{Graph, Var};
use crate::data::{synth_sequence, MotionSequence, SynthSpec};
use crate::error::{Error, Result};
use crate::inpainter::{mse, static_uniform_indices, Architecture, Placement, ReconModel, SCORER_PREFIX};
use crate::nn::{clip_grad_norm, cosine_lr, read_checkpoint, write_checkpoint, AdamW, AdamWConfig, ParamStore};
use crate::rng;
use crate::sampler::{
    gumbel_from_rng, placement_nll, select_best_placement, soft_topk_graph, soft_topk_mask, KeyframeMask,
    KeyframeScores,
};
use crate::tensor::Mat;

/// `n` synthetic sequences drawn with consecutive seeds from `seed`.
pub fn synth_suite(spec: &SynthSpec, n: usize, seed: u64) -> Result<Vec<MotionSequence>> {
    (0..n)
        .map(|i| Ok(synth_sequence(spec, rng::derive(seed, "suite", i as u64))?.sequence))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconStepLog {
    pub step: usize,
    pub report: ReconLossReport,
    pub placement_nll: f64,
    pub tau: f64,
    pub lr_main: f64,
    pub lr_logits: f64,
    pub grad_norm: f64,
}

impl ReconStepLog {
    pub const CSV_HEADER: [&'static str; 14] = [
        "step",
        "motion_l2",
        "quant_codebook",
        "quant_commit",
        "mask_loss",
        "alpha",
        "sparsity_loss",
        "sparsity_weight",
        "total",
        "placement_nll",
        "tau",
        "lr_main",
        "lr_logits",
        "grad_norm",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let r = &self.report;
        let mut v = vec![self.step.to_string()];
        for x in [
            r.motion_l2,
            r.quant_codebook,
            r.quant_commit,
            r.mask_loss,
            r.alpha,
            r.sparsity_loss,
            r.sparsity_weight,
            r.total,
            self.placement_nll,
            self.tau,
            self.lr_main,
            self.lr_logits,
            self.grad_norm,
        ] {
            v.push(format!("{x:?}"));
        }
        v
    }
}

/// Parameters plus both optimizer states at a step boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainCheckpoint {
    /// Number of completed steps.
    pub step: usize,
    pub params: ParamStore,
    pub main: BTreeMap<String, Mat>,
    pub logits: BTreeMap<String, Mat>,
}

impl TrainCheckpoint {
    pub fn to_map(&self) -> BTreeMap<String, Mat> {
        let mut out = BTreeMap::new();
        for (k, v) in self.params.iter() {
            out.insert(format!("param/{k}"), v.clone());
        }
        for (k, v) in &self.main {
            out.insert(format!("opt_main/{k}"), v.clone());
        }
        for (k, v) in &self.logits {
            out.insert(format!("opt_logits/{k}"), v.clone());
        }
        out.insert("meta/step".into(), Mat::scalar(self.step as f64));
        out
    }

    pub fn from_map(map: &BTreeMap<String, Mat>) -> Result<Self> {
        let step = map
            .get("meta/step")
            .ok_or_else(|| Error::Config("checkpoint lacks meta/step".into()))?
            .scalar_value() as usize;
        let pick = |prefix: &str| -> BTreeMap<String, Mat> {
            map.iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect()
        };
        Ok(TrainCheckpoint {
            step,
            params: ParamStore::from_map(pick("param/")),
            main: pick("opt_main/"),
            logits: pick("opt_logits/"),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.to_map())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_map(&read_checkpoint(path)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for `log.csv`, checkpoints and NaN dumps.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<TrainCheckpoint>,
    /// Stop after this many completed steps (the schedule still spans `steps`).
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: TrainCheckpoint,
    pub log: Vec<ReconStepLog>,
}

impl TrainOutcome {
    pub fn params(&self) -> &ParamStore {
        &self.checkpoint.params
    }
}

pub const FINAL_CHECKPOINT: &str = "model.sfck";
pub const LOG_FILE: &str = "log.csv";
pub const NAN_DUMP: &str = "nan_dump.json";

fn is_scorer(name: &str) -> bool {
    name.starts_with(SCORER_PREFIX)
}

#[derive(Serialize)]
struct NanDump<'a> {
    step: usize,
    batch: &'a [usize],
    report: ReconLossReport,
    sequences: Vec<Vec<Vec<f64>>>,
}

struct StepGraph {
    g: Graph,
    total: Var,
    nll: Option<Var>,
    report: ReconLossReport,
}

fn mean_of(g: &mut Graph, parts: &[Var]) -> Var {
    let all = g.concat_cols(parts);
    g.mean_all(all)
}

fn zero(g: &mut Graph) -> Var {
    g.constant(Mat::scalar(0.0))
}

#[allow(clippy::too_many_arguments)]
fn build_step(
    model: &ReconModel,
    store: &ParamStore,
    batch: &[&MotionSequence],
    cfg: &TrainConfig,
    ablation: &SparsityAblationConfig,
    step: usize,
    tau: f64,
) -> Result<StepGraph> {
    let k = model.config.k;
    let s_count = cfg.samples_per_seq;
    let mut g = Graph::new();
    let mut motion = Vec::new();
    let mut cbs = Vec::new();
    let mut cms = Vec::new();
    let mut masks = Vec::new();
    let mut nlls = Vec::new();
    let mut sparsity = Vec::new();
    for (b, seq) in batch.iter().enumerate() {
        let t = seq.len();
        let x = g.constant(seq.frames.clone());
        let (indices, st, logits) = match (model.config.architecture, model.config.placement) {
            (Architecture::Dense, _) => ((0..t).collect(), None, None),
            (Architecture::Sparse, Placement::Static) => (static_uniform_indices(t, k), None, None),
            (Architecture::Sparse, Placement::Dynamic) => {
                let logits = model.scorer.forward(&mut g, store, x)?;
                let scores = KeyframeScores::new(g.value(logits).data().to_vec())?;
                let mut cands: Vec<(KeyframeMask, f64)> = Vec::with_capacity(s_count);
                let mut noises = Vec::with_capacity(s_count);
                for s in 0..s_count {
                    let counter = ((step * batch.len() + b) * s_count + s) as u64;
                    let noise = gumbel_from_rng(t, &mut rng::stream(cfg.seed, "placement", counter));
                    let m = soft_topk_mask(&scores, k, tau, &noise)?;
                    let mut cg = Graph::new();
                    let cx = cg.constant(seq.frames.clone());
                    let f = model.forward(&mut cg, store, cx, &m.indices, None)?;
                    let err = mse(cg.value(f.recon), &seq.frames);
                    cands.push((m, err));
                    noises.push(noise);
                }
                let best = select_best_placement(&cands)?;
                let pick = cands.iter().position(|(m, _)| m.indices == best.indices).expect("best is a candidate");
                let relaxed = soft_topk_graph(&mut g, logits, k, tau, &noises[pick])?;
                let st = g.straight_through(Mat::row_vector(&best.hard), relaxed.soft);
                nlls.push(placement_nll(&mut g, logits, &best.indices)?);
                (best.indices, Some(st), Some(logits))
            }
        };
        let f = model.forward(&mut g, store, x, &indices, st)?;
        let d = g.sub(f.recon, x);
        let sq = g.mul(d, d);
        motion.push(g.mean_all(sq));
        if let (Some(cb), Some(cm)) = (f.codebook_loss, f.commit_loss) {
            cbs.push(cb);
            cms.push(cm);
        }
        if let Some(l) = logits {
            masks.push(mask_loss_graph(&mut g, l));
            if ablation.enabled {
                sparsity.push(sparsity_loss_graph(&mut g, l, ablation.k_target));
            }
        }
    }
    let motion = mean_of(&mut g, &motion);
    let cb = if cbs.is_empty() { zero(&mut g) } else { mean_of(&mut g, &cbs) };
    let cm = if cms.is_empty() { zero(&mut g) } else { mean_of(&mut g, &cms) };
    let mask = if masks.is_empty() { zero(&mut g) } else { mean_of(&mut g, &masks) };
    let mut total = g.add(motion, cb);
    total = g.add(total, cm);
    let am = g.scale(mask, cfg.alpha);
    total = g.add(total, am);
    let sp = if ablation.enabled && !sparsity.is_empty() {
        let s = mean_of(&mut g, &sparsity);
        let ws = g.scale(s, ablation.weight);
        total = g.add(total, ws);
        Some((g.value(s).scalar_value(), ablation.weight))
    } else {
        None
    };
    let val = |g: &Graph, v: Var| g.value(v).scalar_value();
    let report = ReconLossReport {
        motion_l2: val(&g, motion),
        quant_codebook: val(&g, cb),
        quant_commit: val(&g, cm),
        mask_loss: val(&g, mask),
        alpha: cfg.alpha,
        sparsity_loss: sp.map_or(0.0, |s| s.0),
        sparsity_weight: sp.map_or(0.0, |s| s.1),
        total: val(&g, total),
    };
    let nll = if nlls.is_empty() {
        None
    } else {
        Some(mean_of(&mut g, &nlls))
    };
    Ok(StepGraph { g, total, nll, report })
}

fn validate_data(model: &ReconModel, data: &[MotionSequence]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    for s in data {
        s.validate()?;
        if s.dims() != model.config.input_dim {
            return Err(Error::dim(format!(
                "training sequence has {} channels, model expects {}",
                s.dims(),
                model.config.input_dim
            )));
        }
        if s.len() < model.config.k {
            return Err(Error::validation(format!("sequence of {} frames shorter than K", s.len())));
        }
    }
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Write {
        path: path.to_path_buf(),
        source,
    }
}

/// Joint reconstruction training with separate optimizers for the scorer
/// (`scorer.*`) and everything else.
pub fn train_recon(
    model: &ReconModel,
    data: &[MotionSequence],
    cfg: &TrainConfig,
    ablation: &SparsityAblationConfig,
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    validate_data(model, data)?;
    let adam = AdamWConfig {
        beta1: cfg.betas.0,
        beta2: cfg.betas.1,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let mut main = AdamW::new(adam);
    let mut logits_opt = AdamW::new(adam);
    let (mut store, start) = match &opts.resume {
        Some(ck) => {
            main.load_state("", &ck.main);
            logits_opt.load_state("", &ck.logits);
            (ck.params.clone(), ck.step)
        }
        None => (model.init(rng::derive(cfg.seed, "init", 0)), 0),
    };
    let end = opts.stop_after.map_or(cfg.steps, |s| s.min(cfg.steps));
    let schedule = cfg.tau_schedule();

    let mut writer = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(LOG_FILE);
            let append = start > 0 && path.exists();
            let file = fs::OpenOptions::new()
                .create(true)
                .append(append)
                .write(true)
                .truncate(!append)
                .open(&path)
                .map_err(io_err(&path))?;
            let mut w = csv::Writer::from_writer(file);
            if !append {
                w.write_record(ReconStepLog::CSV_HEADER).map_err(|e| Error::Config(e.to_string()))?;
            }
            Some(w)
        }
        None => None,
    };

    let mut log = Vec::with_capacity(end.saturating_sub(start));
    for step in start..end {
        let tau = schedule.tau(step);
        let mut br = rng::stream(cfg.seed, "batch", step as u64);
        let picks: Vec<usize> = (0..cfg.batch).map(|_| br.gen_range(0..data.len())).collect();
        let batch: Vec<&MotionSequence> = picks.iter().map(|&i| &data[i]).collect();
        let sg = build_step(model, &store, &batch, cfg, ablation, step, tau)?;
        if !sg.report.total.is_finite() {
            let dump = opts.out_dir.as_ref().map(|d| d.join(NAN_DUMP));
            if let Some(p) = &dump {
                let body = NanDump {
                    step,
                    batch: &picks,
                    report: sg.report,
                    sequences: batch
                        .iter()
                        .map(|s| (0..s.len()).map(|t| s.frames.row(t).to_vec()).collect())
                        .collect(),
                };
                fs::write(p, serde_json::to_string(&body)?).map_err(io_err(p))?;
            }
            return Err(Error::Numerical {
                message: format!("non-finite loss at step {step}"),
                dump,
            });
        }
        let mut g = sg.g;
        let objective = match sg.nll {
            Some(n) => g.add(sg.total, n),
            None => sg.total,
        };
        let grads = g.backward(objective);
        let mut pg = g.param_grads(&grads);
        let grad_norm = clip_grad_norm(&mut pg, cfg.grad_clip);
        let lr_main = cosine_lr(cfg.lr_main, cfg.lr_main * cfg.lr_min_ratio, step, cfg.steps);
        let lr_logits = cosine_lr(cfg.lr_logits, cfg.lr_logits * cfg.lr_min_ratio, step, cfg.steps);
        main.step(&mut store, &pg, lr_main, |n| !is_scorer(n));
        logits_opt.step(&mut store, &pg, lr_logits, is_scorer);
        let bad = store.non_finite();
        if !bad.is_empty() {
            let dump = opts.out_dir.as_ref().map(|d| d.join(NAN_DUMP));
            if let Some(p) = &dump {
                let body = serde_json::json!({ "step": step, "batch": picks, "non_finite_params": bad });
                fs::write(p, serde_json::to_string(&body)?).map_err(io_err(p))?;
            }
            return Err(Error::Numerical {
                message: format!("parameters diverged at step {step}: {}", bad.join(", ")),
                dump,
            });
        }

        let entry = ReconStepLog {
            step,
            report: sg.report,
            placement_nll: sg.nll.map_or(0.0, |n| g.value(n).scalar_value()),
            tau,
            lr_main,
            lr_logits,
            grad_norm,
        };
        if let Some(w) = writer.as_mut() {
            w.write_record(entry.csv_record()).map_err(|e| Error::Config(e.to_string()))?;
        }
        log.push(entry);

        let done = step + 1;
        if let (Some(dir), true) = (&opts.out_dir, cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
            let ck = TrainCheckpoint {
                step: done,
                params: store.clone(),
                main: main.state(""),
                logits: logits_opt.state(""),
            };
            ck.write(&dir.join(format!("ckpt_{done:06}.sfck")))?;
        }
        log::debug!("step {step} total {:.6} tau {tau:.4}", sg.report.total);
    }
    if let Some(w) = writer.as_mut() {
        w.flush().map_err(Error::Io)?;
    }

    let checkpoint = TrainCheckpoint {
        step: end.max(start),
        params: store,
        main: main.state(""),
        logits: logits_opt.state(""),
    };
    if let Some(dir) = &opts.out_dir {
        checkpoint.write(&dir.join(FINAL_CHECKPOINT))?;
        let cfg_path = dir.join("config.json");
        let body = serde_json::json!({ "model": model.config, "train": cfg, "ablation": ablation });
        fs::write(&cfg_path, serde_json::to_string_pretty(&body)?).map_err(io_err(&cfg_path))?;
    }
    Ok(TrainOutcome { checkpoint, log })
}
