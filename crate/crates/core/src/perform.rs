//! Render a symbolic score into frame-rate performance controls.
//!
//! A score fixes *what* to sing; this module decides *how*: humanized note
//! boundaries, a continuous F0 contour with portamento/vibrato/jitter, and a
//! per-note amplitude envelope. Everything is deterministic given a seed, and
//! all style-dependent behavior comes from a [`StyleProfile`] so styles stay
//! data rather than code.

use crate::dsp::SpectralConfig;
use crate::feature::{AmplitudeEnvelope, F0Curve};
use crate::score::{note_hz, score_to_frames, MusicScore, StyleToken};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Std-dev of the humanized note-boundary jitter, in milliseconds.
pub const TIMING_SIGMA_MS: f64 = 20.0;
/// Hard clip on any single boundary displacement, in milliseconds.
pub const TIMING_CLIP_MS: f64 = 50.0;
/// Sustain level is drawn per note as `SUSTAIN_BASE ± SUSTAIN_JITTER`.
pub const SUSTAIN_BASE: f64 = 0.7;
pub const SUSTAIN_JITTER: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PerformError {
    #[error("timing has {timing} spans but the score has {notes} notes")]
    SpanCountMismatch { timing: usize, notes: usize },
    #[error(transparent)]
    Score(#[from] crate::score::ScoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsShape {
    /// Constant sustain level between attack and release.
    Flat,
    /// Sustain swells toward the middle of the note.
    Arch,
}

/// All knobs a style controls. Vibrato depth 0 disables vibrato.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleProfile {
    pub vibrato_rate_hz: f64,
    pub vibrato_depth_cents: f64,
    pub vibrato_onset_s: f64,
    pub portamento_s: f64,
    pub attack_s: f64,
    pub release_s: f64,
    pub dynamics: DynamicsShape,
    /// Amplitude of the slow random pitch wobble, in cents.
    pub jitter_cents: f64,
}

/// Style lookup table for the four supported style tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleTable {
    profiles: [StyleProfile; StyleToken::COUNT],
}

impl Default for StyleTable {
    fn default() -> Self {
        let pop = StyleProfile {
            vibrato_rate_hz: 5.5,
            vibrato_depth_cents: 0.0,
            vibrato_onset_s: 0.15,
            portamento_s: 0.08,
            attack_s: 0.03,
            release_s: 0.06,
            dynamics: DynamicsShape::Flat,
            jitter_cents: 3.0,
        };
        let opera = StyleProfile {
            vibrato_rate_hz: 6.0,
            vibrato_depth_cents: 0.0,
            vibrato_onset_s: 0.20,
            portamento_s: 0.12,
            attack_s: 0.08,
            release_s: 0.12,
            dynamics: DynamicsShape::Arch,
            jitter_cents: 3.0,
        };
        StyleTable {
            profiles: [
                pop,
                StyleProfile { vibrato_depth_cents: 50.0, ..pop },
                opera,
                StyleProfile { vibrato_depth_cents: 120.0, ..opera },
            ],
        }
    }
}

impl StyleTable {
    pub fn profile(&self, token: StyleToken) -> &StyleProfile {
        &self.profiles[token.index()]
    }

    pub fn profile_mut(&mut self, token: StyleToken) -> &mut StyleProfile {
        &mut self.profiles[token.index()]
    }
}

/// Realized frame spans, one per score note, partitioning `0..total_frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceTiming {
    pub spans: Vec<(usize, usize)>,
}

impl PerformanceTiming {
    pub fn total_frames(&self) -> usize {
        self.spans.last().map(|s| s.1).unwrap_or(0)
    }
}

/// Humanize note boundaries: Gaussian jitter on interior boundaries, clipped,
/// with the first and last boundary pinned so total length is preserved.
pub fn generate_timing(score: &MusicScore, cfg: &SpectralConfig, seed: u64) -> PerformanceTiming {
    generate_timing_with_sigma(score, cfg, seed, TIMING_SIGMA_MS)
}

/// [`generate_timing`] with an explicit jitter sigma; `sigma_ms == 0` returns
/// the nominal quantized spans exactly.
pub fn generate_timing_with_sigma(
    score: &MusicScore,
    cfg: &SpectralConfig,
    seed: u64,
    sigma_ms: f64,
) -> PerformanceTiming {
    let nominal = score_to_frames(score, cfg);
    if sigma_ms == 0.0 || nominal.is_empty() {
        return PerformanceTiming { spans: nominal };
    }
    let period = cfg.frame_period_secs();
    let n = score.notes.len();

    // boundary times in seconds; n+1 boundaries for n notes
    let mut bounds: Vec<f64> = Vec::with_capacity(n + 1);
    bounds.push(score.beats_to_secs(score.notes[0].onset_beats));
    for note in &score.notes {
        bounds.push(score.beats_to_secs(note.onset_beats + note.duration_beats));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma_ms / 1000.0).expect("positive sigma");
    let clip = TIMING_CLIP_MS / 1000.0;
    for b in bounds.iter_mut().take(n).skip(1) {
        let jitter: f64 = normal.sample(&mut rng);
        *b += jitter.clamp(-clip, clip);
    }

    let mut frames: Vec<usize> = bounds.iter().map(|&s| (s / period).round() as usize).collect();
    frames[0] = nominal[0].0;
    frames[n] = nominal[n - 1].1;
    for i in 1..=n {
        frames[i] = frames[i].max(frames[i - 1]);
    }
    let spans = frames.windows(2).map(|w| (w[0], w[1])).collect();
    PerformanceTiming { spans }
}

fn frame_time(t: usize, period: f64) -> f64 {
    t as f64 * period
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Continuous F0 contour over the realized timing: portamento between
/// adjacent pitched notes, vibrato after a per-style onset delay, and a slow
/// random wobble. Rest spans are unvoiced.
pub fn generate_f0_curve(
    score: &MusicScore,
    timing: &PerformanceTiming,
    profile: &StyleProfile,
    cfg: &SpectralConfig,
    seed: u64,
) -> Result<F0Curve, PerformError> {
    if timing.spans.len() != score.notes.len() {
        return Err(PerformError::SpanCountMismatch {
            timing: timing.spans.len(),
            notes: score.notes.len(),
        });
    }
    let total = timing.total_frames();
    let period = cfg.frame_period_secs();
    let mut log2f = vec![0.0f64; total];
    let mut voiced = vec![false; total];

    for (note, &(s, e)) in score.notes.iter().zip(&timing.spans) {
        if let Some(m) = note.midi {
            let base = note_hz(m).log2();
            for t in s..e {
                log2f[t] = base;
                voiced[t] = true;
            }
        }
    }

    // portamento across touching pitched-note boundaries
    for i in 0..score.notes.len().saturating_sub(1) {
        let (cur, nxt) = (&score.notes[i], &score.notes[i + 1]);
        let (Some(a), Some(b)) = (cur.midi, nxt.midi) else { continue };
        let (s0, e0) = timing.spans[i];
        let (s1, e1) = timing.spans[i + 1];
        if e0 != s1 || s0 == e0 || s1 == e1 {
            continue;
        }
        let la = note_hz(a).log2();
        let lb = note_hz(b).log2();
        let boundary = frame_time(e0, period);
        let dur0 = (e0 - s0) as f64 * period;
        let dur1 = (e1 - s1) as f64 * period;
        let w_left = (profile.portamento_s / 2.0).min(dur0 / 2.0);
        let w_right = (profile.portamento_s / 2.0).min(dur1 / 2.0);
        if w_left + w_right <= 0.0 {
            continue;
        }
        let t_start = boundary - w_left;
        let t_end = boundary + w_right;
        for t in s0..e1 {
            let ts = frame_time(t, period);
            if ts < t_start || ts > t_end {
                continue;
            }
            let u = (ts - t_start) / (t_end - t_start);
            log2f[t] = la + (lb - la) * smoothstep(u);
        }
    }

    // smooth random wobble in cents: per-frame uniform, 3-frame moving average
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E3779B97F4A7C15));
    let j = profile.jitter_cents;
    let raw: Vec<f64> = (0..total)
        .map(|_| if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 })
        .collect();
    let jitter: Vec<f64> = (0..total)
        .map(|t| {
            let lo = t.saturating_sub(1);
            let hi = (t + 2).min(total);
            raw[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();

    // vibrato per note, engaging after the onset delay
    let depth = profile.vibrato_depth_cents;
    let mut cents = vec![0.0f64; total];
    for (note, &(s, e)) in score.notes.iter().zip(&timing.spans) {
        if note.midi.is_none() {
            continue;
        }
        let onset = frame_time(s, period) + profile.vibrato_onset_s;
        for t in s..e {
            let ts = frame_time(t, period);
            let vib = if depth > 0.0 && ts >= onset {
                depth * (2.0 * std::f64::consts::PI * profile.vibrato_rate_hz * (ts - onset)).sin()
            } else {
                0.0
            };
            let m = vib + jitter[t];
            cents[t] = if depth > 0.0 { m.clamp(-depth, depth) } else { m };
        }
    }

    let values_hz = (0..total)
        .map(|t| if voiced[t] { 2f64.powf(log2f[t] + cents[t] / 1200.0) as f32 } else { 0.0 })
        .collect();
    Ok(F0Curve { values_hz, voiced, hop: cfg.hop })
}

/// Per-note amplitude envelope: linear attack from silence, sustain at a
/// per-note level near [`SUSTAIN_BASE`], linear release back to silence.
pub fn generate_amplitude(
    score: &MusicScore,
    timing: &PerformanceTiming,
    profile: &StyleProfile,
    cfg: &SpectralConfig,
    seed: u64,
) -> Result<AmplitudeEnvelope, PerformError> {
    if timing.spans.len() != score.notes.len() {
        return Err(PerformError::SpanCountMismatch {
            timing: timing.spans.len(),
            notes: score.notes.len(),
        });
    }
    let total = timing.total_frames();
    let period = cfg.frame_period_secs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x517CC1B727220A95));
    let mut values = vec![0.0f32; total];

    for (note, &(s, e)) in score.notes.iter().zip(&timing.spans) {
        // one draw per note, rests included, keeps note indices seed-stable
        let sustain = SUSTAIN_BASE + rng.random_range(-SUSTAIN_JITTER..=SUSTAIN_JITTER);
        if note.midi.is_none() || s == e {
            continue;
        }
        let dur = (e - s) as f64 * period;
        let mut attack = profile.attack_s;
        let mut release = profile.release_s;
        if attack + release > dur {
            let scale = dur / (attack + release);
            attack *= scale;
            release *= scale;
        }
        let t0 = frame_time(s, period);
        for t in s..e {
            let ts = frame_time(t, period) - t0;
            let gate = if ts < attack {
                ts / attack.max(1e-9)
            } else if ts > dur - release {
                ((dur - ts) / release.max(1e-9)).max(0.0)
            } else {
                1.0
            };
            let shaped = match profile.dynamics {
                DynamicsShape::Flat => sustain,
                DynamicsShape::Arch => {
                    let span = (dur - attack - release).max(1e-9);
                    let u = ((ts - attack) / span).clamp(0.0, 1.0);
                    sustain * (0.92 + 0.08 * (std::f64::consts::PI * u).sin())
                }
            };
            values[t] = (gate * shaped).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(AmplitudeEnvelope { values, hop: cfg.hop })
}
