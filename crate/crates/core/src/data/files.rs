//! Directory layouts for sequence sets and dyads.
//!
//! A dyad `NAME` is stored as `NAME.listener.sfmc`, `NAME.speaker.sfmc` and
//! either `NAME.mel.sfmc` (the Mel frames as a generic container) or
//! `NAME.audio.json` (a token list).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_container, write_container, AudioFeatures, DyadContext, MotionSequence, SchemaId};
use super::MEL_FRAMES_PER_VIDEO_FRAME;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// `sequences` or `dyads`.
    pub kind: String,
    pub seed: u64,
    pub files: Vec<String>,
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Write {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(m)?).map_err(write_err(&path))
}

/// Sorted `*.sfmc` files directly under `dir`, skipping dyad audio tracks.
pub fn list_containers(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".sfmc") && !name.ends_with(".mel.sfmc")
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Every container in `dir` keyed by file name.
pub fn read_sequences(dir: &Path) -> Result<Vec<(String, MotionSequence)>> {
    list_containers(dir)?
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let seq = read_container(&p).map_err(|e| Error::Validation(format!("{}: {e}", p.display())))?;
            Ok((name, seq))
        })
        .collect()
}

pub fn write_dyad(dir: &Path, name: &str, ctx: &DyadContext) -> Result<Vec<PathBuf>> {
    let lp = dir.join(format!("{name}.listener.sfmc"));
    let sp = dir.join(format!("{name}.speaker.sfmc"));
    write_container(&ctx.listener, &lp)?;
    write_container(&ctx.speaker, &sp)?;
    let ap = match &ctx.audio {
        AudioFeatures::Mel(m) => {
            let p = dir.join(format!("{name}.mel.sfmc"));
            let fps = ctx.speaker.fps * MEL_FRAMES_PER_VIDEO_FRAME as f64;
            write_container(&MotionSequence::new(m.clone(), fps, SchemaId::Generic)?, &p)?;
            p
        }
        AudioFeatures::Tokens(t) => {
            let p = dir.join(format!("{name}.audio.json"));
            fs::write(&p, serde_json::to_string(t)?).map_err(write_err(&p))?;
            p
        }
    };
    Ok(vec![lp, sp, ap])
}

pub fn read_dyad(dir: &Path, name: &str) -> Result<DyadContext> {
    let listener = read_container(&dir.join(format!("{name}.listener.sfmc")))?;
    let speaker = read_container(&dir.join(format!("{name}.speaker.sfmc")))?;
    let mel = dir.join(format!("{name}.mel.sfmc"));
    let audio = if mel.exists() {
        AudioFeatures::Mel(read_container(&mel)?.frames)
    } else {
        let p = dir.join(format!("{name}.audio.json"));
        AudioFeatures::Tokens(serde_json::from_str(&fs::read_to_string(&p)?)?)
    };
    DyadContext::new(listener, speaker, audio)
}

/// Sorted dyad names found in `dir`.
pub fn list_dyads(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix(".listener.sfmc"))
                .map(str::to_string)
        })
        .collect();
    names.sort();
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_dyad, AudioKind, SynthDyadSpec};

    #[test]
    fn dyad_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (i, audio) in [AudioKind::Mel, AudioKind::Tokens { per_frame: 2 }].into_iter().enumerate() {
            let spec = SynthDyadSpec {
                audio,
                ..Default::default()
            };
            let ctx = make_dyad(&spec, 3).unwrap().context;
            let name = format!("d{i}");
            write_dyad(dir.path(), &name, &ctx).unwrap();
            let back = read_dyad(dir.path(), &name).unwrap();
            assert_eq!(back.len(), ctx.len());
            assert!(back.audio.validate_for(back.len()).is_ok());
        }
        assert_eq!(list_dyads(dir.path()).unwrap(), vec!["d0", "d1"]);
        // audio tracks are not listed as motion
        assert_eq!(list_containers(dir.path()).unwrap().len(), 4);
    }
}
