//! Signal-derived conditioning features: fundamental frequency and amplitude.
//!
//! F0 uses the YIN method: cumulative-mean-normalized difference with an
//! absolute threshold, parabolic refinement of the selected lag, and a short
//! median filter over voiced runs. Frame geometry is shared with the
//! spectral analysis so every feature stream lines up frame-for-frame.

use crate::audio::AudioBuffer;
use crate::dsp::{hann_window, SpectralConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// YIN aperiodicity threshold: first dip below this is taken as the period.
pub const YIN_THRESHOLD: f32 = 0.15;

/// Frames with mean-square power below this are unvoiced outright.
const POWER_GATE: f32 = 1e-8;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no voiced frames")]
    NoVoicedFrames,
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
}

/// Which kind of material the tracker should expect. Selects the admissible
/// F0 band and how aggressively the track is median-smoothed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainMode {
    Singing,
    Speech,
}

impl DomainMode {
    /// Admissible fundamental range in Hz.
    pub fn f0_band(self) -> (f32, f32) {
        match self {
            DomainMode::Singing => (60.0, 1400.0),
            DomainMode::Speech => (50.0, 500.0),
        }
    }

    /// Median filter length applied to voiced runs.
    pub fn median_window(self) -> usize {
        match self {
            DomainMode::Singing => 5,
            DomainMode::Speech => 9,
        }
    }
}

/// Frame-rate F0 track. `values_hz[t]` is meaningful only where `voiced[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Curve {
    pub values_hz: Vec<f32>,
    pub voiced: Vec<bool>,
    pub hop: usize,
}

impl F0Curve {
    pub fn len(&self) -> usize {
        self.values_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_hz.is_empty()
    }

    pub fn voiced_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.values_hz.iter().zip(self.voiced.iter()).filter(|(_, &v)| v).map(|(&f, _)| f)
    }
}

/// Frame-rate RMS amplitude over Hann-weighted frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeEnvelope {
    pub values: Vec<f32>,
    pub hop: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Stats {
    pub median_hz: f32,
    pub p05_hz: f32,
    pub p95_hz: f32,
    pub voiced_fraction: f32,
}

/// Gather a centered frame of `win` samples around `center` with reflection
/// padding, matching the STFT framing.
fn gather_frame(x: &[f32], center: isize, win: usize, out: &mut [f32]) {
    let n = x.len() as isize;
    let start = center - (win / 2) as isize;
    for (k, o) in out.iter_mut().enumerate() {
        let mut i = start + k as isize;
        if n == 1 {
            *o = x[0];
            continue;
        }
        let period = 2 * (n - 1);
        i = i.rem_euclid(period);
        if i >= n {
            i = period - i;
        }
        *o = x[i as usize];
    }
}

/// Track the fundamental frequency of `audio` at the shared frame rate.
pub fn extract_f0(
    audio: &AudioBuffer,
    mode: DomainMode,
    cfg: &SpectralConfig,
) -> Result<F0Curve, FeatureError> {
    cfg.validate()?;
    if audio.sample_rate() != cfg.sample_rate_hz {
        return Err(FeatureError::InvalidConfig(format!(
            "audio rate {} != config rate {}",
            audio.sample_rate(),
            cfg.sample_rate_hz
        )));
    }
    let sr = cfg.sample_rate_hz as f32;
    let (fmin, fmax) = mode.f0_band();
    let frames = cfg.num_frames(audio.len());
    let win = cfg.win;
    let half = win / 2;

    let lag_min = ((sr / fmax).ceil() as usize).max(2);
    let lag_max = ((sr / fmin).floor() as usize).min(half - 1);
    if lag_min >= lag_max {
        return Err(FeatureError::InvalidConfig(format!(
            "window {win} too short for the [{fmin}, {fmax}] Hz band"
        )));
    }

    let x = audio.samples();
    let mut frame = vec![0.0f32; win];
    let mut d = vec![0.0f32; lag_max + 1];
    let mut dprime = vec![0.0f32; lag_max + 1];
    let mut values = vec![0.0f32; frames];
    let mut voiced = vec![false; frames];

    for t in 0..frames {
        gather_frame(x, (t * cfg.hop) as isize, win, &mut frame);

        let power: f32 = frame[..half].iter().map(|&v| v * v).sum::<f32>() / half as f32;
        if power < POWER_GATE {
            continue;
        }

        // difference function over the first half of the frame
        for tau in 1..=lag_max {
            let mut acc = 0.0f32;
            for i in 0..half {
                let delta = frame[i] - frame[i + tau];
                acc += delta * delta;
            }
            d[tau] = acc;
        }

        // cumulative-mean normalization
        dprime[0] = 1.0;
        let mut running = 0.0f32;
        for tau in 1..=lag_max {
            running += d[tau];
            dprime[tau] = if running > 0.0 { d[tau] * tau as f32 / running } else { 1.0 };
        }

        // first dip below threshold, then walk down to its local minimum
        let mut pick = None;
        let mut tau = lag_min;
        while tau <= lag_max {
            if dprime[tau] < YIN_THRESHOLD {
                while tau + 1 <= lag_max && dprime[tau + 1] < dprime[tau] {
                    tau += 1;
                }
                pick = Some(tau);
                break;
            }
            tau += 1;
        }
        let Some(tau) = pick else { continue };

        // parabolic interpolation around the minimum
        let refined = if tau > 1 && tau < lag_max {
            let (a, b, c) = (dprime[tau - 1], dprime[tau], dprime[tau + 1]);
            let denom = a - 2.0 * b + c;
            let delta = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
            tau as f32 + delta.clamp(-0.5, 0.5)
        } else {
            tau as f32
        };

        let f0 = sr / refined;
        if f0 >= fmin && f0 <= fmax {
            values[t] = f0;
            voiced[t] = true;
        }
    }

    median_smooth_runs(&mut values, &voiced, mode.median_window());
    Ok(F0Curve { values_hz: values, voiced, hop: cfg.hop })
}

/// Median-filter F0 values inside each voiced run; run boundaries are not
/// crossed, so octave-ish outliers get suppressed without smearing onsets.
fn median_smooth_runs(values: &mut [f32], voiced: &[bool], window: usize) {
    if window <= 1 {
        return;
    }
    let half = window / 2;
    let n = values.len();
    let mut t = 0;
    let mut scratch: Vec<f32> = Vec::with_capacity(window);
    while t < n {
        if !voiced[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < n && voiced[t] {
            t += 1;
        }
        let run = &values[start..t];
        let mut smoothed = Vec::with_capacity(run.len());
        for i in 0..run.len() {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(run.len());
            scratch.clear();
            scratch.extend_from_slice(&run[lo..hi]);
            scratch.sort_by(|a, b| a.partial_cmp(b).unwrap());
            smoothed.push(scratch[scratch.len() / 2]);
        }
        values[start..t].copy_from_slice(&smoothed);
    }
}

/// Frame-rate RMS over Hann-weighted centered frames.
pub fn extract_amplitude(
    audio: &AudioBuffer,
    cfg: &SpectralConfig,
) -> Result<AmplitudeEnvelope, FeatureError> {
    cfg.validate()?;
    let frames = cfg.num_frames(audio.len());
    let window = hann_window(cfg.win);
    let wpow: f32 = window.iter().map(|&w| w * w).sum::<f32>() / cfg.win as f32;
    let mut frame = vec![0.0f32; cfg.win];
    let mut values = Vec::with_capacity(frames);
    for t in 0..frames {
        gather_frame(audio.samples(), (t * cfg.hop) as isize, cfg.win, &mut frame);
        let e: f32 =
            frame.iter().zip(window.iter()).map(|(&s, &w)| (s * w) * (s * w)).sum::<f32>()
                / cfg.win as f32;
        // normalize out the window power so a full-scale sine reads ~0.707
        values.push((e / wpow).sqrt());
    }
    Ok(AmplitudeEnvelope { values, hop: cfg.hop })
}

fn percentile(sorted: &[f32], p: f64) -> f32 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let idx = p * (n - 1) as f64;
    let lo = idx.floor() as usize;
    let frac = idx - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        (sorted[lo] as f64 * (1.0 - frac) + sorted[lo + 1] as f64 * frac) as f32
    }
}

/// Median and spread of the voiced portion of a track.
pub fn f0_statistics(curve: &F0Curve) -> Result<F0Stats, FeatureError> {
    let mut v: Vec<f32> = curve.voiced_values().collect();
    if v.is_empty() {
        return Err(FeatureError::NoVoicedFrames);
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(F0Stats {
        median_hz: percentile(&v, 0.5),
        p05_hz: percentile(&v, 0.05),
        p95_hz: percentile(&v, 0.95),
        voiced_fraction: v.len() as f32 / curve.len().max(1) as f32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::PIPELINE_SAMPLE_RATE;

    fn tone(freq: f32, secs: f32, amp: f32) -> AudioBuffer {
        let n = (secs * PIPELINE_SAMPLE_RATE as f32) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f32::consts::PI * freq * i as f32 / 22050.0).sin())
            .collect();
        AudioBuffer::new(s, PIPELINE_SAMPLE_RATE).unwrap()
    }

    fn cents(a: f32, b: f32) -> f32 {
        1200.0 * (a / b).log2().abs()
    }

    #[test]
    fn tracks_sine_within_ten_cents() {
        let cfg = SpectralConfig::default();
        for &freq in &[110.0f32, 220.0, 440.0, 880.0] {
            let f0 = extract_f0(&tone(freq, 1.0, 0.6), DomainMode::Singing, &cfg).unwrap();
            let n = f0.len();
            let interior = &f0.values_hz[n / 10..n - n / 10];
            let vraw = &f0.voiced[n / 10..n - n / 10];
            let voiced = vraw.iter().filter(|&&v| v).count();
            assert!(
                voiced as f32 / vraw.len() as f32 > 0.95,
                "{freq} Hz: voiced fraction {}",
                voiced as f32 / vraw.len() as f32
            );
            for (f, &v) in interior.iter().zip(vraw) {
                if v {
                    assert!(cents(*f, freq) < 10.0, "{freq} Hz tracked at {f}");
                }
            }
        }
    }

    #[test]
    fn speech_mode_tracks_low_tones() {
        let cfg = SpectralConfig::default();
        for &freq in &[110.0f32, 220.0] {
            let f0 = extract_f0(&tone(freq, 1.0, 0.6), DomainMode::Speech, &cfg).unwrap();
            let n = f0.len();
            let interior: Vec<_> = (n / 10..n - n / 10).collect();
            let voiced = interior.iter().filter(|&&t| f0.voiced[t]).count();
            assert!(voiced as f32 / interior.len() as f32 > 0.95);
            for &t in &interior {
                if f0.voiced[t] {
                    assert!(cents(f0.values_hz[t], freq) < 10.0);
                }
            }
        }
    }

    #[test]
    fn speech_band_rejects_high_pitch() {
        let cfg = SpectralConfig::default();
        let f0 = extract_f0(&tone(880.0, 0.5, 0.6), DomainMode::Speech, &cfg).unwrap();
        // 880 Hz lies outside the [50, 500] speech band; the true lag is
        // inadmissible so only subharmonic confusions could fire. None of the
        // frames may report a value inside the band as if it were speech-valid
        // at the true pitch.
        for (f, &v) in f0.values_hz.iter().zip(&f0.voiced) {
            if v {
                assert!(*f <= 500.0, "voiced value {f} above speech band");
            }
        }
    }

    #[test]
    fn silence_is_fully_unvoiced() {
        let cfg = SpectralConfig::default();
        let silent = AudioBuffer::new(vec![0.0; 22050], PIPELINE_SAMPLE_RATE).unwrap();
        let f0 = extract_f0(&silent, DomainMode::Singing, &cfg).unwrap();
        assert!(f0.voiced.iter().all(|&v| !v));
        assert!(f0.values_hz.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn amplitude_tracks_level_and_silence() {
        let cfg = SpectralConfig::default();
        let amp = extract_amplitude(&tone(440.0, 1.0, 0.5), &cfg).unwrap();
        let mid = amp.values[amp.values.len() / 2];
        // RMS of a 0.5-amplitude sine is 0.3536
        assert!((mid - 0.3536).abs() < 0.02, "mid rms {mid}");

        let silent = AudioBuffer::new(vec![0.0; 8192], PIPELINE_SAMPLE_RATE).unwrap();
        let amp0 = extract_amplitude(&silent, &cfg).unwrap();
        assert!(amp0.values.iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn f0_and_amplitude_share_frame_count() {
        let cfg = SpectralConfig::default();
        let a = tone(330.0, 0.73, 0.5);
        let f0 = extract_f0(&a, DomainMode::Singing, &cfg).unwrap();
        let amp = extract_amplitude(&a, &cfg).unwrap();
        assert_eq!(f0.len(), amp.values.len());
        assert_eq!(f0.len(), cfg.num_frames(a.len()));
    }

    #[test]
    fn statistics_percentiles_are_ordered() {
        let cfg = SpectralConfig::default();
        // glide from 200 to 400 Hz
        let n = 22050;
        let mut phase = 0.0f64;
        let s: Vec<f32> = (0..n)
            .map(|i| {
                let f = 200.0 + 200.0 * i as f64 / n as f64;
                phase += 2.0 * std::f64::consts::PI * f / 22050.0;
                (0.6 * phase.sin()) as f32
            })
            .collect();
        let a = AudioBuffer::new(s, PIPELINE_SAMPLE_RATE).unwrap();
        let f0 = extract_f0(&a, DomainMode::Singing, &cfg).unwrap();
        let st = f0_statistics(&f0).unwrap();
        assert!(st.p05_hz <= st.median_hz && st.median_hz <= st.p95_hz);
        assert!(st.median_hz > 220.0 && st.median_hz < 380.0);
        assert!(st.voiced_fraction > 0.8);
    }

    #[test]
    fn statistics_require_voiced_frames() {
        let curve = F0Curve { values_hz: vec![0.0; 10], voiced: vec![false; 10], hop: 256 };
        assert!(matches!(f0_statistics(&curve), Err(FeatureError::NoVoicedFrames)));
    }
}
