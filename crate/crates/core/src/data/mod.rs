//! Motion data types, the SFMC container and the synthetic generators.

mod container;
mod dyad;
mod files;
mod synth;

pub use container::{
    decode_container, encode_container, read_container, read_sidecar, sidecar_path,
    write_container, write_sidecar, Sidecar, CONTAINER_HEADER_LEN, CONTAINER_MAGIC,
    CONTAINER_VERSION,
};
pub use files::{
    list_containers, list_dyads, read_dyad, read_sequences, write_dyad, write_manifest, Manifest, MANIFEST,
};
pub use dyad::{make_dyad, AudioKind, DyadRule, SynthDyad, SynthDyadSpec};
pub use synth::{bump, prototype_bank, synth_sequence, SynthEvent, SynthSequence, SynthSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Feature layout identifier, stored as a `u32` in containers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SchemaId {
    Generic,
    Deca56,
    Faceverse58,
}

impl SchemaId {
    pub fn code(self) -> u32 {
        match self {
            SchemaId::Generic => 0,
            SchemaId::Deca56 => 1,
            SchemaId::Faceverse58 => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<SchemaId> {
        match code {
            0 => Some(SchemaId::Generic),
            1 => Some(SchemaId::Deca56),
            2 => Some(SchemaId::Faceverse58),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub id: SchemaId,
    pub expression_dims: usize,
    pub pose_dims: usize,
}

impl FeatureSchema {
    pub const DECA56: FeatureSchema = FeatureSchema {
        id: SchemaId::Deca56,
        expression_dims: 50,
        pose_dims: 6,
    };

    pub const FACEVERSE58: FeatureSchema = FeatureSchema {
        id: SchemaId::Faceverse58,
        expression_dims: 52,
        pose_dims: 6,
    };

    /// Schema for `id` at width `d`. Generic schemas treat every channel as expression.
    pub fn resolve(id: SchemaId, d: usize) -> Result<FeatureSchema> {
        let s = match id {
            SchemaId::Generic => FeatureSchema {
                id,
                expression_dims: d,
                pose_dims: 0,
            },
            SchemaId::Deca56 => Self::DECA56,
            SchemaId::Faceverse58 => Self::FACEVERSE58,
        };
        if s.dims() != d {
            return Err(Error::dim(format!("{id:?} expects {} channels, got {d}", s.dims())));
        }
        Ok(s)
    }

    pub fn dims(&self) -> usize {
        self.expression_dims + self.pose_dims
    }

    /// Channels averaged into the lip-curvature proxy, with their signs.
    ///
    /// * FACEVERSE58 follows ARKit blendshape order: smile L/R (23, 24) count
    ///   positive, frown L/R (25, 26) negative.
    /// * DECA56 expression codes carry no semantic labels; the first ten
    ///   (highest-variance, mouth-dominated) components are used.
    /// * GENERIC averages all channels.
    pub fn lip_channels(&self) -> Vec<(usize, f64)> {
        match self.id {
            SchemaId::Faceverse58 => vec![(23, 1.0), (24, 1.0), (25, -1.0), (26, -1.0)],
            SchemaId::Deca56 => (0..10).map(|c| (c, 1.0)).collect(),
            SchemaId::Generic => (0..self.expression_dims).map(|c| (c, 1.0)).collect(),
        }
    }

    /// Head-rotation channels: first three pose channels, or the last
    /// `min(3, d)` channels of a generic layout.
    pub fn rotation_channels(&self) -> Vec<usize> {
        match self.id {
            SchemaId::Generic => {
                let d = self.dims();
                (d.saturating_sub(3)..d).collect()
            }
            _ => (self.expression_dims..self.expression_dims + 3).collect(),
        }
    }
}

/// A T×d sequence of per-frame face coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frames: Mat,
    pub fps: f64,
    pub schema: SchemaId,
}

impl MotionSequence {
    pub fn new(frames: Mat, fps: f64, schema: SchemaId) -> Result<Self> {
        let s = MotionSequence { frames, fps, schema };
        s.validate()?;
        Ok(s)
    }

    /// All-zero (neutral) sequence.
    pub fn neutral(t: usize, d: usize, fps: f64, schema: SchemaId) -> Result<Self> {
        Self::new(Mat::zeros(t, d), fps, schema)
    }

    pub fn validate(&self) -> Result<()> {
        let (t, d) = self.frames.shape();
        if t == 0 || d == 0 {
            return Err(Error::validation(format!("empty sequence {t}x{d}")));
        }
        if !self.frames.is_finite() {
            return Err(Error::validation("sequence contains non-finite values"));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::validation(format!("fps must be positive, got {}", self.fps)));
        }
        FeatureSchema::resolve(self.schema, d)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dims(&self) -> usize {
        self.frames.cols()
    }

    pub fn feature_schema(&self) -> FeatureSchema {
        FeatureSchema::resolve(self.schema, self.dims()).expect("validated schema")
    }

    /// Frames `start..start+len`.
    pub fn window(&self, start: usize, len: usize) -> Result<MotionSequence> {
        if len == 0 || start + len > self.len() {
            return Err(Error::validation(format!(
                "window {start}+{len} outside sequence of {}",
                self.len()
            )));
        }
        Ok(MotionSequence {
            frames: self.frames.slice_rows(start, len),
            fps: self.fps,
            schema: self.schema,
        })
    }

    /// Per-frame lip-curvature proxy (see [`FeatureSchema::lip_channels`]).
    pub fn lip_curvature(&self) -> Vec<f64> {
        let ch = self.feature_schema().lip_channels();
        let n = ch.len().max(1) as f64;
        (0..self.len())
            .map(|t| ch.iter().map(|&(c, s)| s * self.frames.get(t, c)).sum::<f64>() / n)
            .collect()
    }

    /// Per-frame head-rotation magnitude.
    pub fn head_motion(&self) -> Vec<f64> {
        let ch = self.feature_schema().rotation_channels();
        (0..self.len())
            .map(|t| ch.iter().map(|&c| self.frames.get(t, c).powi(2)).sum::<f64>().sqrt())
            .collect()
    }
}

/// Speaker audio aligned to a video track of T frames.
#[derive(Debug, Clone, PartialEq)]
pub enum AudioFeatures {
    /// (4T)×128 Mel spectrogram.
    Mel(Mat),
    /// Discrete speech tokens at any rate; resampled to T on encoding.
    Tokens(Vec<u32>),
}

pub const MEL_BINS: usize = 128;
pub const MEL_FRAMES_PER_VIDEO_FRAME: usize = 4;

impl AudioFeatures {
    pub fn validate_for(&self, video_frames: usize) -> Result<()> {
        match self {
            AudioFeatures::Mel(m) => {
                if m.rows() != MEL_FRAMES_PER_VIDEO_FRAME * video_frames {
                    return Err(Error::dim(format!(
                        "mel has {} rows, expected 4x{video_frames}",
                        m.rows()
                    )));
                }
                if m.cols() != MEL_BINS {
                    return Err(Error::dim(format!("mel has {} bins, expected {MEL_BINS}", m.cols())));
                }
                if !m.is_finite() {
                    return Err(Error::validation("mel contains non-finite values"));
                }
            }
            AudioFeatures::Tokens(t) => {
                if t.is_empty() {
                    return Err(Error::validation("empty audio token stream"));
                }
            }
        }
        Ok(())
    }

    /// Audio covering video frames `start..start+len`. Token streams are cut
    /// proportionally to their rate relative to `video_frames`.
    pub fn window(&self, video_frames: usize, start: usize, len: usize) -> AudioFeatures {
        match self {
            AudioFeatures::Mel(m) => AudioFeatures::Mel(m.slice_rows(
                MEL_FRAMES_PER_VIDEO_FRAME * start,
                MEL_FRAMES_PER_VIDEO_FRAME * len,
            )),
            AudioFeatures::Tokens(t) => {
                let rate = t.len() as f64 / video_frames as f64;
                let a = ((start as f64 * rate).round() as usize).min(t.len() - 1);
                let b = (((start + len) as f64 * rate).round() as usize).clamp(a + 1, t.len());
                AudioFeatures::Tokens(t[a..b].to_vec())
            }
        }
    }
}

/// Time-aligned listener, speaker and speaker-audio streams.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadContext {
    pub listener: MotionSequence,
    pub speaker: MotionSequence,
    pub audio: AudioFeatures,
}

impl DyadContext {
    pub fn new(listener: MotionSequence, speaker: MotionSequence, audio: AudioFeatures) -> Result<Self> {
        let c = DyadContext {
            listener,
            speaker,
            audio,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.listener.validate()?;
        self.speaker.validate()?;
        if self.listener.len() != self.speaker.len() {
            return Err(Error::dim(format!(
                "listener has {} frames, speaker {}",
                self.listener.len(),
                self.speaker.len()
            )));
        }
        self.audio.validate_for(self.speaker.len())
    }

    pub fn len(&self) -> usize {
        self.listener.len()
    }

    pub fn is_empty(&self) -> bool {
        self.listener.is_empty()
    }
}
