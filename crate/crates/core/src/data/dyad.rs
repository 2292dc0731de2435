//! Synthetic speaker/listener pairs with a known response rule.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::synth::{prototype_bank, render};
use super::{
    synth_sequence, AudioFeatures, DyadContext, MotionSequence, SchemaId, SynthEvent, SynthSpec,
    MEL_BINS, MEL_FRAMES_PER_VIDEO_FRAME,
};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DyadRule {
    /// `listener[t] = speaker[t - lag]`, neutral before `lag`.
    CopyLag { lag: usize },
    /// A speaker event of class `c` triggers a listener event of class
    /// `class_map[c]` exactly `lag` frames later.
    EventResponse {
        lag: usize,
        class_map: Vec<usize>,
        amplitude: f64,
        half_width: f64,
    },
}

impl DyadRule {
    pub fn lag(&self) -> usize {
        match self {
            DyadRule::CopyLag { lag } | DyadRule::EventResponse { lag, .. } => *lag,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AudioKind {
    Mel,
    /// Speech tokens at `per_frame` tokens per video frame.
    Tokens { per_frame: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDyadSpec {
    pub speaker: SynthSpec,
    pub rule: DyadRule,
    pub audio: AudioKind,
    pub listener_bank_seed: u64,
}

impl Default for SynthDyadSpec {
    fn default() -> Self {
        SynthDyadSpec {
            speaker: SynthSpec {
                frames: 192,
                dims: 8,
                events: 8,
                classes: 2,
                min_separation: 12,
                drift: 0.0,
                ..Default::default()
            },
            rule: DyadRule::EventResponse {
                lag: 10,
                class_map: vec![1, 0],
                amplitude: 1.0,
                half_width: 3.0,
            },
            audio: AudioKind::Mel,
            listener_bank_seed: 4321,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDyad {
    pub context: DyadContext,
    pub speaker_events: Vec<SynthEvent>,
    pub listener_events: Vec<SynthEvent>,
    pub rule: DyadRule,
}

fn synth_audio(kind: AudioKind, events: &[SynthEvent], frames: usize, seed: u64) -> AudioFeatures {
    match kind {
        AudioKind::Mel => {
            let mut r = rng::stream(seed, "dyad-audio", 0);
            let rows = MEL_FRAMES_PER_VIDEO_FRAME * frames;
            let mut m = Mat::from_fn(rows, MEL_BINS, |_, _| r.gen_range(0.0..0.05));
            let band = 16;
            for e in events {
                let lo = (e.class * band) % MEL_BINS;
                for tau in 0..rows {
                    let t = tau as f64 / MEL_FRAMES_PER_VIDEO_FRAME as f64;
                    let w = e.amplitude * super::bump((t - e.apex as f64) / e.half_width);
                    if w == 0.0 {
                        continue;
                    }
                    for b in lo..lo + band {
                        m.set(tau, b, m.get(tau, b) + w);
                    }
                }
            }
            AudioFeatures::Mel(m)
        }
        AudioKind::Tokens { per_frame } => {
            let per_frame = per_frame.max(1);
            let tokens = (0..frames * per_frame)
                .map(|i| {
                    let t = i / per_frame;
                    events
                        .iter()
                        .find(|e| e.covers(t))
                        .map_or(0, |e| 1 + e.class as u32)
                })
                .collect();
            AudioFeatures::Tokens(tokens)
        }
    }
}

pub fn make_dyad(spec: &SynthDyadSpec, seed: u64) -> Result<SynthDyad> {
    let t_len = spec.speaker.frames;
    let lag = spec.rule.lag();
    if lag >= t_len {
        return Err(Error::validation(format!("lag {lag} must be shorter than {t_len} frames")));
    }
    let speaker = synth_sequence(&spec.speaker, rng::derive(seed, "dyad-speaker", 0))?;
    let d = spec.speaker.dims;

    let (listener_frames, listener_events) = match &spec.rule {
        DyadRule::CopyLag { lag } => {
            let x = Mat::from_fn(t_len, d, |t, j| {
                if t >= *lag {
                    speaker.sequence.frames.get(t - lag, j)
                } else {
                    0.0
                }
            });
            let events = speaker
                .events
                .iter()
                .filter(|e| e.apex + lag < t_len)
                .map(|e| SynthEvent::new(e.apex + lag, e.class, e.amplitude, e.half_width, t_len))
                .collect();
            (x, events)
        }
        DyadRule::EventResponse {
            lag,
            class_map,
            amplitude,
            half_width,
        } => {
            if class_map.len() < spec.speaker.classes {
                return Err(Error::validation(format!(
                    "class_map covers {} of {} speaker classes",
                    class_map.len(),
                    spec.speaker.classes
                )));
            }
            let events: Vec<SynthEvent> = speaker
                .events
                .iter()
                .filter(|e| e.apex + lag < t_len)
                .map(|e| SynthEvent::new(e.apex + lag, class_map[e.class], *amplitude, *half_width, t_len))
                .collect();
            let classes = class_map.iter().max().map_or(1, |m| m + 1);
            let bank = prototype_bank(classes, d, spec.listener_bank_seed);
            (render(&events, &bank, &Mat::zeros(t_len, d)), events)
        }
    };

    let audio = synth_audio(spec.audio, &speaker.events, t_len, seed);
    let listener = MotionSequence::new(listener_frames, spec.speaker.fps, SchemaId::Generic)?;
    Ok(SynthDyad {
        context: DyadContext::new(listener, speaker.sequence, audio)?,
        speaker_events: speaker.events,
        listener_events,
        rule: spec.rule.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_rule_shifts_speaker() {
        let spec = SynthDyadSpec {
            rule: DyadRule::CopyLag { lag: 4 },
            ..Default::default()
        };
        let dy = make_dyad(&spec, 5).unwrap();
        let (l, s) = (&dy.context.listener.frames, &dy.context.speaker.frames);
        for t in 0..l.rows() {
            for j in 0..l.cols() {
                let want = if t >= 4 { s.get(t - 4, j) } else { 0.0 };
                assert_eq!(l.get(t, j), want);
            }
        }
    }

    #[test]
    fn same_seed_same_dyad() {
        let spec = SynthDyadSpec::default();
        assert_eq!(make_dyad(&spec, 9).unwrap(), make_dyad(&spec, 9).unwrap());
    }

    #[test]
    fn lag_must_fit() {
        let mut spec = SynthDyadSpec::default();
        spec.rule = DyadRule::CopyLag { lag: spec.speaker.frames };
        assert!(matches!(make_dyad(&spec, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn listener_events_follow_triggers_by_lag() {
        let mut spec = SynthDyadSpec::default();
        spec.speaker.frames = 200;
        let dy = make_dyad(&spec, 21).unwrap();
        let lag = spec.rule.lag();
        assert!(!dy.listener_events.is_empty());
        for le in &dy.listener_events {
            let trigger = dy
                .speaker_events
                .iter()
                .find(|se| se.apex + lag == le.apex)
                .expect("listener event without a trigger");
            assert_eq!(le.class, [1, 0][trigger.class]);
        }
    }

    #[test]
    fn audio_tokens_track_events() {
        let spec = SynthDyadSpec {
            audio: AudioKind::Tokens { per_frame: 2 },
            ..Default::default()
        };
        let dy = make_dyad(&spec, 2).unwrap();
        let AudioFeatures::Tokens(tok) = &dy.context.audio else { panic!() };
        assert_eq!(tok.len(), 2 * spec.speaker.frames);
        let e = &dy.speaker_events[0];
        assert_eq!(tok[2 * e.apex], 1 + e.class as u32);
    }
}
