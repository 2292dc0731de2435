use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sfms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfms"))
        .args(args)
        .env("SFMS_LOG_LEVEL", "error")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn all_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn synth(out: &Path, count: usize, seed: u64) -> Output {
    sfms(&["synth", "--out", p(out), "--count", &count.to_string(), "--seed", &seed.to_string()])
}

#[test]
fn synth_zero_count_writes_an_empty_manifest() {
    let d = tempfile::tempdir().unwrap();
    let o = synth(d.path(), 0, 1);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["files"].as_array().unwrap().len(), 0);
}

#[test]
fn synth_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(synth(a.path(), 3, 5).status.success());
    assert!(synth(b.path(), 3, 5).status.success());
    let files = all_bytes(a.path());
    // three containers, three sidecars and the manifest
    assert_eq!(files.len(), 7);
    assert_eq!(files, all_bytes(b.path()));
    let c = tempfile::tempdir().unwrap();
    assert!(synth(c.path(), 3, 6).status.success());
    assert_ne!(files, all_bytes(c.path()));
}

#[test]
fn bad_flags_exit_with_usage_code() {
    assert_eq!(sfms(&["synth", "--out", "x", "--count", "many"]).status.code(), Some(2));
    assert_eq!(sfms(&["no-such-command"]).status.code(), Some(2));
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        sfms(&["synth", "--out", p(d.path()), "--count", "1", "--events", "99"]).status.code(),
        Some(2)
    );
}

#[test]
fn missing_input_exits_with_io_code() {
    let d = tempfile::tempdir().unwrap();
    let o = sfms(&[
        "eval",
        "--gen",
        p(&d.path().join("nope")),
        "--gt",
        p(&d.path().join("nope")),
        "--speaker",
        p(&d.path().join("nope")),
        "--suite",
        "l2l",
        "--out",
        p(&d.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

fn metric(report: &serde_json::Value, name: &str) -> f64 {
    report["metrics"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["name"] == name)
        .unwrap_or_else(|| panic!("no {name}"))["value"]
        .as_f64()
        .unwrap()
}

#[test]
fn eval_self_comparison() {
    let d = tempfile::tempdir().unwrap();
    let gt = d.path().join("gt");
    let spk = d.path().join("spk");
    assert!(synth(&gt, 4, 1).status.success());
    assert!(synth(&spk, 4, 2).status.success());
    let out = d.path().join("l2l.json");
    let csv = d.path().join("l2l.csv");
    let o = sfms(&[
        "eval", "--gen", p(&gt), "--gt", p(&gt), "--speaker", p(&spk), "--suite", "l2l", "--out", p(&out), "--csv",
        p(&csv), "--plots",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["suite"], "l2l");
    assert_eq!(metric(&r, "l2"), 0.0);
    assert!(metric(&r, "fd").abs() < 1e-8);
    assert_eq!(metric(&r, "rpcc_expression"), 0.0);
    assert!(fs::read_to_string(&csv).unwrap().starts_with("suite,name,value,degenerate"));
    for fig in ["l2l_lip.png", "l2l_tlcc.png", "l2l_motion.png"] {
        assert!(d.path().join(fig).exists(), "{fig}");
    }

    let out = d.path().join("react.json");
    let o = sfms(&[
        "eval", "--gen", p(&gt), "--gt", p(&gt), "--speaker", p(&spk), "--suite", "react", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(metric(&r, "fr_dist"), 0.0);
    assert_eq!(metric(&r, "fr_corr"), 1.0);
    assert_eq!(metric(&r, "fr_syn"), 0.0);
}

#[test]
fn eval_reports_mismatched_lengths() {
    let d = tempfile::tempdir().unwrap();
    let gt = d.path().join("gt");
    let gen = d.path().join("gen");
    assert!(synth(&gt, 2, 1).status.success());
    assert!(sfms(&["synth", "--out", p(&gen), "--count", "2", "--frames", "40"]).status.success());
    let o = sfms(&[
        "eval", "--gen", p(&gen), "--gt", p(&gt), "--speaker", p(&gt), "--suite", "l2l", "--out",
        p(&d.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("#0") && err.contains("#1"), "{err}");
}

fn recon_config(dir: &Path, data: &Path, out: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join(format!("recon_{}.cfg", out.file_name().unwrap().to_string_lossy()));
    let text = format!(
        "data_dir = {}\nout_dir = {}\nsteps = 4\nbatch = 2\nsamples_per_seq = 2\n\
         model.dim = 8\nmodel.heads = 2\nmodel.layers = 1\nmodel.ffn = 16\n\
         scorer.dim = 8\nscorer.heads = 2\nscorer.layers = 1\nscorer.ffn = 16\n{extra}",
        data.display(),
        out.display()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_resume_reconstruct_and_tokenize() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    assert!(synth(&data, 4, 3).status.success());
    let full = d.path().join("full");
    let cfg = recon_config(d.path(), &data, &full, "checkpoint_every = 2\n");
    let o = sfms(&["train-recon", "--config", p(&cfg), "--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(full.join("log.csv").exists());

    let resumed = d.path().join("resumed");
    let cfg2 = recon_config(d.path(), &data, &resumed, "");
    let o = sfms(&[
        "train-recon",
        "--config",
        p(&cfg2),
        "--seed",
        "9",
        "--resume",
        p(&full.join("ckpt_000002.sfck")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(full.join("model.sfck")).unwrap(), fs::read(resumed.join("model.sfck")).unwrap());

    let seq = data.join("seq_00000.sfmc");
    let rec = d.path().join("rec.sfmc");
    let o = sfms(&["reconstruct", "--ckpt", p(&full.join("model.sfck")), "--input", p(&seq), "--out", p(&rec)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(rec.exists());
    let tok = d.path().join("tokens.json");
    let o = sfms(&["tokenize", "--ckpt", p(&full.join("model.sfck")), "--input", p(&seq), "--out", p(&tok)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(&tok).unwrap()).unwrap();
    assert_eq!(t["classes"].as_array().unwrap().len(), 48);
}

#[test]
fn config_errors_name_the_key() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    assert!(synth(&data, 2, 3).status.success());
    let cfg = d.path().join("bad.cfg");
    fs::write(&cfg, format!("data_dir = {}\nout_dir = {}\n", data.display(), d.path().join("o").display())).unwrap();
    let o = sfms(&["train-recon", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("steps"));

    let cfg = recon_config(d.path(), &data, &d.path().join("o2"), "tau.shape = wobbly\n");
    assert_eq!(sfms(&["train-recon", "--config", p(&cfg)]).status.code(), Some(2));
}

#[test]
fn divergence_exits_with_numerical_code_and_dump() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    assert!(synth(&data, 2, 3).status.success());
    let out = d.path().join("nan");
    let cfg = recon_config(d.path(), &data, &out, "lr_main = 1e300\nlr_min_ratio = 1\nplacement = static\n");
    let o = sfms(&["train-recon", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("nan_dump.json").exists());
}
