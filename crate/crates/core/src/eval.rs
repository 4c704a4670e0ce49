//! Objective evaluation metrics.
//!
//! Listening tests don't automate, so quality and similarity are scored by
//! proxies instead: spectral distance (`mel_l1`), pitch accuracy in cents on
//! jointly voiced frames (`f0_rmse_cents`), voicing agreement (`vuv_error`),
//! and speaker similarity (`timbre_cos`). All frame-wise comparisons run over
//! the overlap of the two signals, which makes every metric symmetric in its
//! arguments (pitch error is symmetric anyway, it's squared).

use serde::Serialize;
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::dsp::{mel_spectrogram, DspError, SpectralConfig};
use crate::embed::{timbre_embed, EmbedError};
use crate::feature::{extract_f0, DomainMode, FeatureError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Mean absolute log-mel difference over overlapping frames.
    pub mel_l1: f64,
    /// RMS pitch error in cents over jointly voiced frames; `None` when the
    /// pair has no jointly voiced frame (not the same thing as zero error).
    pub f0_rmse_cents: Option<f64>,
    /// Fraction of overlapping frames whose voicing flags disagree.
    pub vuv_error: f64,
    /// Cosine between the two timbre embeddings.
    pub timbre_cos: f32,
}

/// Score `hyp` against `ref_audio`. Both are pitch-tracked as singing.
pub fn evaluate(
    ref_audio: &AudioBuffer,
    hyp_audio: &AudioBuffer,
    cfg: &SpectralConfig,
) -> Result<MetricsReport, EvalError> {
    let mel_r = mel_spectrogram(ref_audio, cfg)?;
    let mel_h = mel_spectrogram(hyp_audio, cfg)?;
    let frames = mel_r.rows().min(mel_h.rows());
    let mut acc = 0.0f64;
    for t in 0..frames {
        let (a, b) = (mel_r.row(t), mel_h.row(t));
        for c in 0..mel_r.cols() {
            acc += (a[c] as f64 - b[c] as f64).abs();
        }
    }
    let mel_l1 = acc / (frames * mel_r.cols()) as f64;

    let f0_r = extract_f0(ref_audio, DomainMode::Singing, cfg)?;
    let f0_h = extract_f0(hyp_audio, DomainMode::Singing, cfg)?;
    let overlap = f0_r.len().min(f0_h.len());
    let mut sq = 0.0f64;
    let mut joint = 0usize;
    let mut disagree = 0usize;
    for t in 0..overlap {
        match (f0_r.voiced[t], f0_h.voiced[t]) {
            (true, true) => {
                let cents = 1200.0 * (f0_h.values_hz[t] as f64 / f0_r.values_hz[t] as f64).log2();
                sq += cents * cents;
                joint += 1;
            }
            (true, false) | (false, true) => disagree += 1,
            (false, false) => {}
        }
    }
    let f0_rmse_cents = (joint > 0).then(|| (sq / joint as f64).sqrt());
    let vuv_error = disagree as f64 / overlap.max(1) as f64;

    let emb_r = timbre_embed(ref_audio, cfg)?;
    let emb_h = timbre_embed(hyp_audio, cfg)?;
    Ok(MetricsReport { mel_l1, f0_rmse_cents, vuv_error, timbre_cos: emb_r.cosine(&emb_h) })
}
