//! Command-line front end (`sfms`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::data::{
    list_dyads, make_dyad, read_container, read_dyad, read_sequences, synth_sequence, write_container, write_dyad,
    write_manifest, write_sidecar, AudioFeatures, AudioKind, DyadContext, Manifest, MotionSequence, Sidecar,
    SynthDyadSpec, SynthSpec,
};
use crate::error::{Error, Result};
use crate::inpainter::{reconstruct, ReconConfig, ReconModel};
use crate::metrics::{l2l_suite, plot_heatmap, plot_lines, react_suite, tlcc, write_csv, write_json};
use crate::predictor::{rollout, tokenize_listener, AudioInput, Predictor, PredictorConfig, RolloutMode};
use crate::quantizer::TokenSequence;
use crate::rng;
use crate::trainer::{
    extract_windows, train_predictor, train_recon, FlatConfig, TrainCheckpoint, TrainOptions,
};

#[derive(Debug, Parser)]
#[command(name = "sfms", version, about = "Sparse facial motion tokenization, inpainting and listener prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Suite {
    L2l,
    React,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AudioArg {
    Mel,
    Tokens,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Greedy,
    Sample,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic sequences (or dyads) as SFMC containers.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 48)]
        frames: usize,
        #[arg(long, default_value_t = 8)]
        dims: usize,
        #[arg(long, default_value_t = 5)]
        events: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write listener/speaker/audio dyads instead of single sequences.
        #[arg(long)]
        dyads: bool,
        #[arg(long, value_enum, default_value = "mel")]
        audio: AudioArg,
    },
    /// Train the keyframe tokenizer and inpainter.
    TrainRecon {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides the `seed` key.
        #[arg(long)]
        seed: Option<u64>,
        /// Data loading workers; loading is sequential, so any value gives
        /// the same result.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Train the listener-token predictor on dyads.
    TrainPred {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        recon_ckpt: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Compute a metric suite over generated and reference directories.
    Eval {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        speaker: PathBuf,
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long)]
        out: PathBuf,
        /// Also write a CSV table here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write figures next to the report.
        #[arg(long)]
        plots: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Token classes for one sequence.
    Tokenize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenize and inpaint a sequence window by window.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out listener tokens and motion for a dyad.
    Predict {
        #[arg(long)]
        recon_ckpt: PathBuf,
        #[arg(long)]
        pred_ckpt: PathBuf,
        /// Dyad directory.
        #[arg(long)]
        dyads: PathBuf,
        #[arg(long)]
        name: String,
        /// Observed listener frames before generation starts.
        #[arg(long, default_value_t = 40)]
        prefix: usize,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
        #[arg(long, value_enum, default_value = "greedy")]
        mode: ModeArg,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Process exit code for an error: 2 usage, 3 numerical, 4 I/O.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical { .. } => 3,
        Error::Io(_) | Error::Write { .. } | Error::Parse { .. } | Error::Json(_) => 4,
        _ => 2,
    }
}

pub fn main() -> ExitCode {
    let level = std::env::var("SFMS_LOG_LEVEL").unwrap_or_else(|_| "warn".into());
    env_logger::Builder::new().parse_filters(&level).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            out,
            count,
            frames,
            dims,
            events,
            seed,
            dyads,
            audio,
        } => cmd_synth(&out, count, frames, dims, events, seed, dyads, audio),
        Command::TrainRecon {
            config,
            resume,
            seed,
            workers,
        } => cmd_train_recon(&config, resume.as_deref(), seed, workers),
        Command::TrainPred {
            config,
            recon_ckpt,
            resume,
            seed,
            workers,
        } => cmd_train_pred(&config, &recon_ckpt, resume.as_deref(), seed, workers),
        Command::Eval {
            gen,
            gt,
            speaker,
            suite,
            out,
            csv,
            plots,
            seed,
        } => cmd_eval(&gen, &gt, &speaker, suite, &out, csv.as_deref(), plots, seed),
        Command::Tokenize { ckpt, input, out } => {
            let (model, store) = load_recon(&ckpt)?;
            let seq = read_container(&input)?;
            tokenize_listener(&model, &store, &seq)?.write(&out)
        }
        Command::Reconstruct { ckpt, input, out } => {
            let (model, store) = load_recon(&ckpt)?;
            let seq = read_container(&input)?;
            let rec = reconstruct_any(&model, &store, &seq)?;
            write_container(&rec, &out)
        }
        Command::Predict {
            recon_ckpt,
            pred_ckpt,
            dyads,
            name,
            prefix,
            horizon,
            mode,
            temperature,
            seed,
            out,
        } => {
            let (model, rstore) = load_recon(&recon_ckpt)?;
            let (pred, pstore) = load_pred(&pred_ckpt)?;
            let ctx = read_dyad(&dyads, &name)?;
            if prefix == 0 || prefix > ctx.len() {
                return Err(Error::validation(format!("prefix must lie in 1..={}", ctx.len())));
            }
            let tokens = tokenize_listener(&model, &rstore, &ctx.listener)?;
            let mode = match mode {
                ModeArg::Greedy => RolloutMode::Greedy,
                ModeArg::Sample => RolloutMode::Sample { temperature },
            };
            let r = rollout(&pred, &pstore, &model, &rstore, &ctx, &tokens.classes[..prefix], horizon, mode, seed)?;
            mkdir(&out)?;
            r.tokens.write(&out.join("tokens.json"))?;
            write_container(&r.motion, &out.join("motion.sfmc"))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    out: &Path,
    count: usize,
    frames: usize,
    dims: usize,
    events: usize,
    seed: u64,
    dyads: bool,
    audio: AudioArg,
) -> Result<()> {
    mkdir(out)?;
    let mut files = Vec::new();
    if dyads {
        let mut spec = SynthDyadSpec::default();
        spec.speaker.frames = frames;
        spec.speaker.dims = dims;
        spec.speaker.events = events;
        spec.audio = match audio {
            AudioArg::Mel => AudioKind::Mel,
            AudioArg::Tokens => AudioKind::Tokens { per_frame: 2 },
        };
        for i in 0..count {
            let dy = make_dyad(&spec, rng::derive(seed, "synth-dyad", i as u64))?;
            let name = format!("dyad_{i:05}");
            write_dyad(out, &name, &dy.context)?;
            files.push(name);
        }
    } else {
        let spec = SynthSpec {
            frames,
            dims,
            events,
            ..Default::default()
        };
        spec.validate()?;
        for i in 0..count {
            let s = synth_sequence(&spec, rng::derive(seed, "suite", i as u64))?;
            let name = format!("seq_{i:05}.sfmc");
            let path = out.join(&name);
            write_container(&s.sequence, &path)?;
            write_sidecar(
                &path,
                &Sidecar {
                    fps: s.sequence.fps,
                    schema: s.sequence.schema,
                    events: s.events,
                },
            )?;
            files.push(name);
        }
    }
    write_manifest(
        out,
        &Manifest {
            kind: if dyads { "dyads" } else { "sequences" }.into(),
            seed,
            files,
        },
    )
}

fn read_flat(path: &Path, seed: Option<u64>) -> Result<FlatConfig> {
    let mut cfg = FlatConfig::read(path)?;
    if let Some(s) = seed {
        cfg.set("seed", s);
    }
    Ok(cfg)
}

fn out_dir(cfg: &FlatConfig) -> Result<PathBuf> {
    Ok(PathBuf::from(cfg.require::<String>("out_dir")?))
}

/// Windows of `len` frames every `stride` frames; shorter sequences are
/// skipped.
fn cut_windows(seqs: Vec<MotionSequence>, len: usize, stride: usize) -> Result<Vec<MotionSequence>> {
    let mut out = Vec::new();
    for s in seqs {
        if s.len() < len {
            continue;
        }
        let mut start = 0;
        while start + len <= s.len() {
            out.push(s.window(start, len)?);
            start += stride.max(1);
        }
    }
    Ok(out)
}

fn cmd_train_recon(config: &Path, resume: Option<&Path>, seed: Option<u64>, workers: usize) -> Result<()> {
    if workers == 0 {
        return Err(Error::validation("--workers must be positive"));
    }
    let cfg = read_flat(config, seed)?;
    let data_dir = PathBuf::from(cfg.require::<String>("data_dir")?);
    let seqs: Vec<MotionSequence> = read_sequences(&data_dir)?
        .into_iter()
        .filter(|(n, _)| !n.ends_with(".speaker.sfmc"))
        .map(|(_, s)| s)
        .collect();
    let input_dim = seqs.first().map(|s| s.dims()).ok_or_else(|| Error::validation("no sequences in data_dir"))?;
    let (model_cfg, train, ablation) = cfg.recon_settings(input_dim)?;
    let stride = cfg.get_or("window_stride", model_cfg.frames)?;
    let data = cut_windows(seqs, model_cfg.frames, stride)?;
    let model = ReconModel::new(model_cfg)?;
    let opts = TrainOptions {
        out_dir: Some(out_dir(&cfg)?),
        resume: resume.map(TrainCheckpoint::read).transpose()?,
        stop_after: None,
    };
    let out = train_recon(&model, &data, &train, &ablation, opts)?;
    log::info!("finished {} steps", out.checkpoint.step);
    Ok(())
}

fn config_json(ckpt: &Path, file: &str) -> Result<serde_json::Value> {
    let dir = ckpt.parent().unwrap_or(Path::new("."));
    let p = dir.join(file);
    let text = fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Tokenizer model and parameters from a checkpoint with its `config.json`.
pub fn load_recon(ckpt: &Path) -> Result<(ReconModel, crate::nn::ParamStore)> {
    let v = config_json(ckpt, "config.json")?;
    let cfg: ReconConfig = serde_json::from_value(v["model"].clone())?;
    let model = ReconModel::new(cfg)?;
    Ok((model, TrainCheckpoint::read(ckpt)?.params))
}

pub fn load_pred(ckpt: &Path) -> Result<(Predictor, crate::nn::ParamStore)> {
    let v = config_json(ckpt, "pred_config.json")?;
    let cfg: PredictorConfig = serde_json::from_value(v["model"].clone())?;
    Ok((Predictor::new(cfg)?, TrainCheckpoint::read(ckpt)?.params))
}

fn load_dyads(dir: &Path) -> Result<Vec<(String, DyadContext)>> {
    list_dyads(dir)?
        .into_iter()
        .map(|n| Ok((n.clone(), read_dyad(dir, &n)?)))
        .collect()
}

fn cmd_train_pred(
    config: &Path,
    recon_ckpt: &Path,
    resume: Option<&Path>,
    seed: Option<u64>,
    workers: usize,
) -> Result<()> {
    if workers == 0 {
        return Err(Error::validation("--workers must be positive"));
    }
    let cfg = read_flat(config, seed)?;
    let (model, rstore) = load_recon(recon_ckpt)?;
    let dyads = load_dyads(&PathBuf::from(cfg.require::<String>("data_dir")?))?;
    let first = &dyads.first().ok_or_else(|| Error::validation("no dyads in data_dir"))?.1;
    let audio = match &first.audio {
        AudioFeatures::Mel(_) => AudioInput::Mel,
        AudioFeatures::Tokens(_) => {
            let vocab = dyads
                .iter()
                .filter_map(|(_, d)| match &d.audio {
                    AudioFeatures::Tokens(t) => t.iter().max().copied(),
                    AudioFeatures::Mel(_) => None,
                })
                .max()
                .unwrap_or(0) as usize
                + 1;
            AudioInput::Tokens { vocab }
        }
    };
    let (pcfg, train) = cfg.pred_settings(
        model.config.codebook_size(),
        first.speaker.dims(),
        audio,
        model.config.frames,
        model.config.k,
    )?;
    let tokenized: Vec<(DyadContext, TokenSequence)> = dyads
        .into_iter()
        .map(|(_, d)| {
            let t = tokenize_listener(&model, &rstore, &d.listener)?;
            Ok((d, t))
        })
        .collect::<Result<_>>()?;
    let windows = extract_windows(&tokenized, cfg.get_or("window_stride", 8)?)?;
    let pred = Predictor::new(pcfg)?;
    let opts = TrainOptions {
        out_dir: Some(out_dir(&cfg)?),
        resume: resume.map(TrainCheckpoint::read).transpose()?,
        stop_after: None,
    };
    train_predictor(&pred, &windows, &train, opts)?;
    Ok(())
}

/// Reconstruction of a sequence of any length at least one window long:
/// consecutive windows, the last aligned to the end.
pub fn reconstruct_any(model: &ReconModel, store: &crate::nn::ParamStore, seq: &MotionSequence) -> Result<MotionSequence> {
    let w = model.config.frames;
    if seq.len() < w {
        return Err(Error::validation(format!("sequence of {} frames shorter than the {w}-frame window", seq.len())));
    }
    let mut frames = seq.frames.clone();
    let mut start = 0;
    loop {
        let s = start.min(seq.len() - w);
        let rec = reconstruct(model, store, &seq.window(s, w)?)?;
        for t in 0..w {
            frames.row_mut(s + t).copy_from_slice(rec.motion.frames.row(t));
        }
        if s + w >= seq.len() {
            break;
        }
        start += w;
    }
    MotionSequence::new(frames, seq.fps, seq.schema)
}

fn load_named(dir: &Path, names: &[String]) -> Result<Vec<MotionSequence>> {
    let missing: Vec<&String> = names.iter().filter(|n| !dir.join(n.as_str()).exists()).collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "{}: missing {}",
            dir.display(),
            missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    names.iter().map(|n| read_container(&dir.join(n))).collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    gen: &Path,
    gt: &Path,
    speaker: &Path,
    suite: Suite,
    out: &Path,
    csv: Option<&Path>,
    plots: bool,
    seed: u64,
) -> Result<()> {
    let names: Vec<String> = read_sequences(gt)?.into_iter().map(|(n, _)| n).collect();
    if names.is_empty() {
        return Err(Error::validation(format!("no containers in {}", gt.display())));
    }
    let gt_seqs = load_named(gt, &names)?;
    let spk = load_named(speaker, &names)?;
    let (report, first_gen) = match suite {
        Suite::L2l => {
            let g = load_named(gen, &names)?;
            (l2l_suite(&g, &gt_seqs, &spk, seed)?, g[0].clone())
        }
        Suite::React => {
            // generations either sit directly in `gen` or in sub-directories
            let mut subdirs: Vec<PathBuf> = fs::read_dir(gen)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            subdirs.sort();
            let sets: Vec<Vec<MotionSequence>> = if subdirs.is_empty() {
                vec![load_named(gen, &names)?]
            } else {
                subdirs.iter().map(|d| load_named(d, &names)).collect::<Result<_>>()?
            };
            let first = sets[0][0].clone();
            (react_suite(&sets, &gt_seqs, &spk)?, first)
        }
    };
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    write_json(&report, out)?;
    if let Some(c) = csv {
        write_csv(&report, c)?;
    }
    if plots {
        let stem = out.with_extension("");
        let stem = stem.to_string_lossy();
        let lip = |s: &MotionSequence| s.lip_curvature();
        plot_lines(
            Path::new(&format!("{stem}_lip.png")),
            &[lip(&gt_seqs[0]), lip(&first_gen), lip(&spk[0])],
            640,
            240,
        )?;
        let max_lag = 30.min(spk[0].len().saturating_sub(2) / 2);
        let curve = tlcc(&lip(&spk[0]), &lip(&first_gen), max_lag)?;
        plot_lines(
            Path::new(&format!("{stem}_tlcc.png")),
            &[curve.curve.iter().map(|(_, c)| *c).collect()],
            320,
            240,
        )?;
        plot_heatmap(Path::new(&format!("{stem}_motion.png")), &first_gen.frames.transpose(), 6)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code(&Error::Numerical {
                message: "x".into(),
                dump: None
            }),
            3
        );
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 4);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
