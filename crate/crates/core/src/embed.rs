//! Conditioning encoders: who is singing (timbre), what is being sung
//! (content, from lyrics or from audio), and how (style).
//!
//! The timbre and acoustic-content encoders are fixed, seeded feature
//! projections: deterministic, training-free stand-ins with the interface
//! contracts the acoustic model needs (speaker discrimination for timbre,
//! gain invariance for content). The lyric content encoder is the one
//! *trainable* encoder; its parameters live with the model and are updated by
//! the diffusion loss.

use crate::audio::AudioBuffer;
use crate::dsp::{dct_ii, mel_from_stft, mel_filterbank, stft, SpectralConfig};
use crate::feature::{extract_amplitude, extract_f0, f0_statistics, DomainMode};
use crate::mat::{dot, Mat, Scalar};
use crate::score::AlignedLyrics;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub const TIMBRE_DIM: usize = 192;
pub const CONTENT_DIM: usize = 64;
pub const STYLE_DIM: usize = 8;
/// Cepstral coefficients c1..c20 feed the acoustic content encoder.
pub const LOCAL_CEPSTRA: usize = 20;
/// Minimum audio needed for a stable timbre estimate.
pub const TIMBRE_MIN_SECS: f64 = 1.0;

const TIMBRE_PROJ_SEED: u64 = 0x7110_BEED_0001;
const LOCAL_PROJ_SEED: u64 = 0x7110_BEED_0002;
/// Voiced log2-F0 offsets from the utterance median, histogrammed over this
/// many bins spanning [-1, +1] octaves.
const F0_HIST_BINS: usize = 32;
/// Frames with RMS above this fraction of the utterance peak count as active.
const ACTIVE_RMS_FRACTION: f32 = 0.1;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("timbre embedding needs at least {min} s of audio, got {got:.3} s")]
    TooShort { min: f64, got: f64 },
    #[error("alignment covers {covered} frames but {requested} were requested")]
    AlignmentLength { covered: usize, requested: usize },
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Feature(#[from] crate::feature::FeatureError),
    #[error(transparent)]
    Score(#[from] crate::score::ScoreError),
}

/// Unit-norm speaker identity vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TimbreEmbedding {
    v: Vec<f32>,
}

impl TimbreEmbedding {
    /// Wrap raw values, normalizing to unit length.
    pub fn from_raw(mut v: Vec<f32>) -> Self {
        l2_normalize(&mut v);
        TimbreEmbedding { v }
    }

    pub fn values(&self) -> &[f32] {
        &self.v
    }

    pub fn cosine(&self, other: &TimbreEmbedding) -> f32 {
        dot(&self.v, &other.v)
    }
}

fn l2_normalize(v: &mut [f32]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Fixed random projection, `out_dim x in_dim`, entries `N(0, 1/in_dim)`.
fn fixed_projection(out_dim: usize, in_dim: usize, seed: u64) -> Mat<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (in_dim as f64).sqrt();
    Mat::from_fn(out_dim, in_dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        (z * scale) as f32
    })
}

/// Summarize the speaker of `audio` as a unit vector: level-independent
/// spectral shape statistics over active frames plus a pitch-offset
/// histogram, mixed through a fixed projection.
pub fn timbre_embed(
    audio: &AudioBuffer,
    cfg: &SpectralConfig,
) -> Result<TimbreEmbedding, EmbedError> {
    if audio.duration_secs() < TIMBRE_MIN_SECS {
        return Err(EmbedError::TooShort { min: TIMBRE_MIN_SECS, got: audio.duration_secs() });
    }
    let mel = crate::dsp::mel_spectrogram(audio, cfg)?;
    let amp = extract_amplitude(audio, cfg)?;
    let peak = amp.values.iter().cloned().fold(0.0f32, f32::max);
    let mut active: Vec<usize> =
        (0..mel.rows()).filter(|&t| amp.values[t] > ACTIVE_RMS_FRACTION * peak).collect();
    if active.is_empty() {
        active = (0..mel.rows()).collect();
    }

    let n_mels = cfg.n_mels;
    let mut mean = vec![0.0f32; n_mels];
    for &t in &active {
        for (m, &v) in mel.row(t).iter().enumerate() {
            mean[m] += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= active.len() as f32);
    let mut std = vec![0.0f32; n_mels];
    for &t in &active {
        for (m, &v) in mel.row(t).iter().enumerate() {
            let d = v - mean[m];
            std[m] += d * d;
        }
    }
    std.iter_mut().for_each(|v| *v = (*v / active.len() as f32).sqrt());

    let mut hist = vec![0.0f32; F0_HIST_BINS];
    let f0 = extract_f0(audio, DomainMode::Singing, cfg)?;
    if let Ok(stats) = f0_statistics(&f0) {
        let mut count = 0usize;
        for f in f0.voiced_values() {
            let off = (f / stats.median_hz).log2().clamp(-1.0, 1.0);
            let bin = (((off + 1.0) / 2.0 * F0_HIST_BINS as f32) as usize).min(F0_HIST_BINS - 1);
            hist[bin] += 1.0;
            count += 1;
        }
        if count > 0 {
            hist.iter_mut().for_each(|v| *v /= count as f32);
        }
    }

    let mut feat = Vec::with_capacity(TIMBRE_DIM);
    feat.extend_from_slice(&mean);
    feat.extend_from_slice(&std);
    feat.extend_from_slice(&hist);
    debug_assert_eq!(feat.len(), 2 * n_mels + F0_HIST_BINS);

    let proj = fixed_projection(TIMBRE_DIM, feat.len(), TIMBRE_PROJ_SEED);
    let mut out = vec![0.0f32; TIMBRE_DIM];
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(proj.row(i), &feat);
    }
    l2_normalize(&mut out);
    Ok(TimbreEmbedding { v: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentSource {
    Lyrics,
    Acoustic,
}

/// Frame-rate content embedding, `T x CONTENT_DIM`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentEmbeddingSequence {
    pub frames: Mat<f32>,
    pub source: ContentSource,
}

/// Encode *what* is being sung directly from audio: gain-normalized cepstral
/// shape per frame through a fixed projection. Scaling the input by a power
/// of two leaves the output bit-identical.
pub fn content_encode_local(
    audio: &AudioBuffer,
    cfg: &SpectralConfig,
) -> Result<ContentEmbeddingSequence, EmbedError> {
    let peak = audio.samples().iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    let normalized: Vec<f32> = if peak > 0.0 {
        audio.samples().iter().map(|&v| v / peak).collect()
    } else {
        audio.samples().to_vec()
    };
    let spec = stft(&normalized, cfg)?;
    let fb = mel_filterbank(cfg)?;
    let mel = mel_from_stft(&spec, &fb, cfg);
    let frames = mel.rows();

    // c1..c20 of each frame; c0 (overall level) is deliberately dropped
    let mut ceps = Mat::zeros(frames, LOCAL_CEPSTRA);
    for t in 0..frames {
        let c = dct_ii(mel.row(t), LOCAL_CEPSTRA + 1);
        ceps.row_mut(t).copy_from_slice(&c[1..]);
    }

    // per-utterance, per-coefficient mean/variance normalization
    for j in 0..LOCAL_CEPSTRA {
        let mut mu = 0.0f32;
        for t in 0..frames {
            mu += ceps.get(t, j);
        }
        mu /= frames as f32;
        let mut var = 0.0f32;
        for t in 0..frames {
            let d = ceps.get(t, j) - mu;
            var += d * d;
        }
        let sd = (var / frames as f32).sqrt() + 1e-8;
        for t in 0..frames {
            let v = (ceps.get(t, j) - mu) / sd;
            ceps.set(t, j, v);
        }
    }

    let proj = fixed_projection(CONTENT_DIM, LOCAL_CEPSTRA, LOCAL_PROJ_SEED);
    let mut out = Mat::zeros(frames, CONTENT_DIM);
    for t in 0..frames {
        let src = ceps.row(t);
        let dst = out.row_mut(t);
        for (i, d) in dst.iter_mut().enumerate() {
            *d = dot(proj.row(i), src);
        }
    }
    Ok(ContentEmbeddingSequence { frames: out, source: ContentSource::Acoustic })
}

/// Parameters of the trainable lyric content encoder: a phoneme embedding
/// table and two feed-forward layers. The within-phoneme position enters as
/// one extra input alongside the embedding; the hidden layer is tanh and the
/// output passes through a leaky rectifier (slope 0.1).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<F: Scalar> {
    /// `n_phonemes x embed_dim`
    pub table: Mat<F>,
    /// `(embed_dim + 1) x hidden`
    pub w1: Mat<F>,
    pub b1: Vec<F>,
    /// `hidden x out`
    pub w2: Mat<F>,
    pub b2: Vec<F>,
}

pub const LEAKY_SLOPE: f64 = 0.1;

#[inline]
pub fn leaky_relu<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        x
    } else {
        x * F::of(LEAKY_SLOPE)
    }
}

impl<F: Scalar> EncoderParams<F> {
    pub fn init(
        n_phonemes: usize,
        embed_dim: usize,
        hidden: usize,
        out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut gauss = |rows: usize, cols: usize, scale: f64| {
            Mat::from_fn(rows, cols, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                F::of(z * scale)
            })
        };
        let table = gauss(n_phonemes, embed_dim, 1.0);
        let w1 = gauss(embed_dim + 1, hidden, 1.0 / ((embed_dim + 1) as f64).sqrt());
        let w2 = gauss(hidden, out, 1.0 / (hidden as f64).sqrt());
        EncoderParams { table, w1, b1: vec![F::zero(); hidden], w2, b2: vec![F::zero(); out] }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            table: Mat::zeros(self.table.rows(), self.table.cols()),
            w1: Mat::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![F::zero(); self.b1.len()],
            w2: Mat::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![F::zero(); self.b2.len()],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.b2.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.b1.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.table.cols()
    }

    /// Forward one frame. Returns the output and, if requested, the hidden
    /// preactivations needed by the backward pass.
    pub fn forward_frame(&self, symbol: usize, pos: F) -> (Vec<F>, Vec<F>, Vec<F>) {
        let hidden = self.hidden_dim();
        let out = self.out_dim();
        let e = self.table.row(symbol);

        let mut z1 = self.b1.clone();
        for (j, &ej) in e.iter().enumerate() {
            crate::mat::axpy(ej, self.w1.row(j), &mut z1);
        }
        crate::mat::axpy(pos, self.w1.row(self.embed_dim()), &mut z1);
        let h: Vec<F> = z1.iter().map(|&z| z.tanh()).collect();

        let mut z2 = self.b2.clone();
        for (j, &hj) in h.iter().enumerate() {
            crate::mat::axpy(hj, self.w2.row(j), &mut z2);
        }
        let y: Vec<F> = z2.iter().map(|&z| leaky_relu(z)).collect();
        debug_assert_eq!((h.len(), y.len()), (hidden, out));
        (y, h, z2)
    }
}

/// Encode aligned lyrics into a frame-rate content sequence using frozen
/// encoder parameters (the training path differentiates through the same
/// arithmetic inside the model).
pub fn content_encode_lyrics(
    lyrics: &AlignedLyrics,
    total_frames: usize,
    params: &EncoderParams<f32>,
) -> Result<ContentEmbeddingSequence, EmbedError> {
    if lyrics.total_frames() < total_frames {
        return Err(EmbedError::AlignmentLength {
            covered: lyrics.total_frames(),
            requested: total_frames,
        });
    }
    let symbols = lyrics.frame_symbols(total_frames)?;
    let mut out = Mat::zeros(total_frames, params.out_dim());
    for (t, &(id, pos)) in symbols.iter().enumerate() {
        let (y, _, _) = params.forward_frame(id, pos);
        out.row_mut(t).copy_from_slice(&y);
    }
    Ok(ContentEmbeddingSequence { frames: out, source: ContentSource::Lyrics })
}

/// Look up the style vector for a token in a `4 x STYLE_DIM` table.
pub fn style_embed(token: crate::score::StyleToken, table: &Mat<f32>) -> Vec<f32> {
    table.row(token.index()).to_vec()
}
