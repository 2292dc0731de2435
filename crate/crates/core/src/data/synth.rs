//! Synthetic expression sequences: a drifting baseline plus localized
//! raised-cosine "expression events", each with an onset, an apex and an
//! offset. The event list doubles as ground truth for keyframe diagnostics.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{MotionSequence, SchemaId};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub frames: usize,
    pub dims: usize,
    pub events: usize,
    /// Event amplitude range.
    pub amplitude: (f64, f64),
    /// Bump half-width range in frames (the smoothness knob).
    pub half_width: (f64, f64),
    /// Baseline drift amplitude; 0 gives a flat zero baseline.
    pub drift: f64,
    /// Number of event prototypes (channel loading patterns).
    pub classes: usize,
    /// Seed of the prototype bank, shared by every sequence of a suite.
    pub bank_seed: u64,
    /// Minimum distance between event apexes.
    pub min_separation: usize,
    pub fps: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            frames: 48,
            dims: 8,
            events: 5,
            amplitude: (0.5, 1.5),
            half_width: (2.5, 3.5),
            drift: 0.05,
            classes: 6,
            bank_seed: 1234,
            min_separation: 4,
            fps: 30.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.dims == 0 {
            return Err(Error::validation("frames and dims must be positive"));
        }
        if self.events > self.frames {
            return Err(Error::validation(format!(
                "{} events do not fit in {} frames",
                self.events, self.frames
            )));
        }
        if self.events > 0 && self.classes == 0 {
            return Err(Error::validation("events need at least one class"));
        }
        let (a0, a1) = self.amplitude;
        let (w0, w1) = self.half_width;
        if !(a0.is_finite() && a1.is_finite() && a0 <= a1) {
            return Err(Error::validation("bad amplitude range"));
        }
        if !(w0 > 0.0 && w0 <= w1 && w1.is_finite()) {
            return Err(Error::validation("bad half-width range"));
        }
        if !(self.drift.is_finite() && self.fps > 0.0) {
            return Err(Error::validation("bad drift or fps"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEvent {
    pub apex: usize,
    pub onset: usize,
    pub offset: usize,
    pub class: usize,
    pub amplitude: f64,
    pub half_width: f64,
}

impl SynthEvent {
    pub fn new(apex: usize, class: usize, amplitude: f64, half_width: f64, frames: usize) -> Self {
        let onset = (apex as f64 - half_width).ceil().max(0.0) as usize;
        let offset = ((apex as f64 + half_width).floor() as usize).min(frames - 1);
        SynthEvent {
            apex,
            onset,
            offset,
            class,
            amplitude,
            half_width,
        }
    }

    pub fn covers(&self, t: usize) -> bool {
        self.onset <= t && t <= self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub sequence: MotionSequence,
    pub events: Vec<SynthEvent>,
}

/// Raised-cosine bump: 1 at 0, falling to 0 at |u| = 1, zero outside.
pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * u).cos())
    }
}

/// `classes × dims` loading patterns, each scaled to unit max-abs.
pub fn prototype_bank(classes: usize, dims: usize, bank_seed: u64) -> Mat {
    let mut r = rng::stream(bank_seed, "prototype-bank", 0);
    let mut m = Mat::from_fn(classes, dims, |_, _| r.gen_range(-1.0..1.0));
    for c in 0..classes {
        let row = m.row_mut(c);
        let mx = row.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
        for v in row.iter_mut() {
            *v /= mx;
        }
    }
    m
}

/// Render `events` over `frames` with prototype loadings and a baseline.
pub(crate) fn render(events: &[SynthEvent], bank: &Mat, baseline: &Mat) -> Mat {
    let mut x = baseline.clone();
    let (t_len, d) = x.shape();
    for e in events {
        for t in e.onset..=e.offset.min(t_len - 1) {
            let w = e.amplitude * bump((t as f64 - e.apex as f64) / e.half_width);
            if w == 0.0 {
                continue;
            }
            for j in 0..d {
                let v = x.get(t, j) + w * bank.get(e.class, j);
                x.set(t, j, v);
            }
        }
    }
    x
}

pub(crate) fn sample_apexes(
    r: &mut rng::Rng,
    frames: usize,
    count: usize,
    min_separation: usize,
) -> Result<Vec<usize>> {
    let mut apexes: Vec<usize> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..10_000 {
            let a = r.gen_range(0..frames);
            if apexes.iter().all(|&b| a.abs_diff(b) >= min_separation.max(1)) {
                apexes.push(a);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::validation(format!(
                "cannot place {count} events {min_separation} frames apart in {frames} frames"
            )));
        }
    }
    apexes.sort_unstable();
    Ok(apexes)
}

pub fn synth_sequence(spec: &SynthSpec, seed: u64) -> Result<SynthSequence> {
    spec.validate()?;
    let mut r = rng::stream(seed, "synth-sequence", 0);
    let (t_len, d) = (spec.frames, spec.dims);

    let baseline = if spec.drift == 0.0 {
        Mat::zeros(t_len, d)
    } else {
        let params: Vec<(f64, f64)> = (0..d)
            .map(|_| (r.gen_range(0.25..1.0), r.gen_range(0.0..std::f64::consts::TAU)))
            .collect();
        Mat::from_fn(t_len, d, |t, j| {
            let (f, phi) = params[j];
            spec.drift * (std::f64::consts::TAU * f * t as f64 / t_len as f64 + phi).sin()
        })
    };

    let apexes = sample_apexes(&mut r, t_len, spec.events, spec.min_separation)?;
    let events: Vec<SynthEvent> = apexes
        .into_iter()
        .map(|apex| {
            let class = r.gen_range(0..spec.classes);
            let amplitude = r.gen_range(spec.amplitude.0..=spec.amplitude.1);
            let hw = r.gen_range(spec.half_width.0..=spec.half_width.1);
            SynthEvent::new(apex, class, amplitude, hw, t_len)
        })
        .collect();

    let bank = prototype_bank(spec.classes.max(1), d, spec.bank_seed);
    let frames = render(&events, &bank, &baseline);
    Ok(SynthSequence {
        sequence: MotionSequence::new(frames, spec.fps, SchemaId::Generic)?,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_events_no_drift_is_zero() {
        let spec = SynthSpec {
            events: 0,
            drift: 0.0,
            ..Default::default()
        };
        let s = synth_sequence(&spec, 3).unwrap();
        assert!(s.sequence.frames.data().iter().all(|&v| v == 0.0));
        assert!(s.events.is_empty());
    }

    #[test]
    fn deterministic() {
        let spec = SynthSpec::default();
        assert_eq!(synth_sequence(&spec, 11).unwrap(), synth_sequence(&spec, 11).unwrap());
        assert_ne!(
            synth_sequence(&spec, 11).unwrap().sequence,
            synth_sequence(&spec, 12).unwrap().sequence
        );
    }

    #[test]
    fn too_many_events_rejected() {
        let spec = SynthSpec {
            frames: 4,
            events: 5,
            ..Default::default()
        };
        assert!(matches!(synth_sequence(&spec, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn channel_peaks_fall_inside_event_windows() {
        let spec = SynthSpec {
            frames: 48,
            dims: 8,
            events: 5,
            drift: 0.0,
            ..Default::default()
        };
        let s = synth_sequence(&spec, 7).unwrap();
        assert_eq!(s.events.len(), 5);
        let x = &s.sequence.frames;
        for j in 0..8 {
            let col = x.col(j);
            let (t_max, v) = col
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |acc, (t, v)| if v.abs() > acc.1 { (t, v.abs()) } else { acc });
            if v == 0.0 {
                continue;
            }
            assert!(
                s.events.iter().any(|e| e.covers(t_max)),
                "channel {j} peaks at {t_max}, outside every event window"
            );
        }
    }

    #[test]
    fn bump_shape() {
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(1.0), 0.0);
        assert!((bump(0.5) - 0.5).abs() < 1e-12);
    }
}
