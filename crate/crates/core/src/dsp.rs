//! Spectral analysis and resynthesis.
//!
//! Conventions, fixed across the whole pipeline:
//! - frames are centered: the signal is reflection-padded by `fft/2` on both
//!   sides, so a signal of `len` samples yields `len/hop + 1` frames;
//! - analysis window is a periodic Hann of length `win`, zero-padded
//!   symmetrically to `fft` when shorter;
//! - mel filters are triangles equally spaced on the HTK mel scale
//!   `m(f) = 2595 * log10(1 + f/700)`, evaluated at FFT bin centers;
//! - mel energies are natural-log compressed with a fixed floor of `1e-5`.

use crate::audio::{AudioBuffer, AudioError};
use crate::mat::Mat;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor applied to mel energies before the natural log.
pub const MEL_FLOOR: f32 = 1e-5;

/// `ln(MEL_FLOOR)`: the value silent frames take in log-mel space.
pub fn log_mel_floor() -> f32 {
    MEL_FLOOR.ln()
}

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid spectral config: {0}")]
    InvalidConfig(String),
    #[error("mel filter {index} covers no FFT bin; raise fft size or lower n_mels")]
    EmptyFilter { index: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Frame/filterbank geometry shared by every analysis and synthesis routine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub sample_rate_hz: u32,
    pub hop: usize,
    pub win: usize,
    pub fft: usize,
    pub n_mels: usize,
    pub fmin_hz: f32,
    pub fmax_hz: f32,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            sample_rate_hz: 22050,
            hop: 256,
            win: 1024,
            fft: 1024,
            n_mels: 80,
            fmin_hz: 0.0,
            fmax_hz: 11025.0,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        let err = |msg: String| Err(DspError::InvalidConfig(msg));
        if self.hop == 0 {
            return err("hop must be >= 1".into());
        }
        if self.win < 2 || self.win > self.fft {
            return err(format!("win must be in [2, fft]; win={} fft={}", self.win, self.fft));
        }
        if self.hop > self.win {
            return err(format!("hop {} exceeds win {}", self.hop, self.win));
        }
        if self.fft % 2 != 0 {
            return err(format!("fft must be even, got {}", self.fft));
        }
        if self.n_mels == 0 {
            return err("n_mels must be >= 1".into());
        }
        let nyquist = self.sample_rate_hz as f32 / 2.0;
        if !(0.0..nyquist).contains(&self.fmin_hz) || self.fmax_hz > nyquist {
            return err(format!(
                "mel band [{}, {}] must lie within [0, {nyquist}]",
                self.fmin_hz, self.fmax_hz
            ));
        }
        if self.fmin_hz >= self.fmax_hz {
            return err("fmin must be below fmax".into());
        }
        Ok(())
    }

    /// Number of analysis frames produced for `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    pub fn bins(&self) -> usize {
        self.fft / 2 + 1
    }

    pub fn frame_period_secs(&self) -> f64 {
        self.hop as f64 / self.sample_rate_hz as f64
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f32> {
    (0..n)
        .map(|k| {
            let x = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            (0.5 - 0.5 * x.cos()) as f32
        })
        .collect()
}

/// Index into `x` with reflection at the boundaries (edge sample not doubled).
#[inline]
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Short-time Fourier transform. Returns `num_frames(len) x (fft/2 + 1)`
/// complex bins; frame `t` is centered on sample `t * hop`.
pub fn stft(x: &[f32], cfg: &SpectralConfig) -> Result<Mat<Complex<f32>>, DspError> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(DspError::InvalidConfig("empty signal".into()));
    }
    let frames = cfg.num_frames(x.len());
    let bins = cfg.bins();
    let window = hann_window(cfg.win);
    let offset = (cfg.fft - cfg.win) / 2;

    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(cfg.fft);
    let mut buf = vec![Complex::new(0.0f32, 0.0); cfg.fft];
    let mut out = Mat::from_elem(frames, bins, Complex::new(0.0f32, 0.0));

    for t in 0..frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        let center = (t * cfg.hop) as isize;
        let start = center - (cfg.win / 2) as isize;
        for (k, &w) in window.iter().enumerate() {
            let s = x[reflect_index(start + k as isize, x.len())];
            buf[offset + k] = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        out.row_mut(t).copy_from_slice(&buf[..bins]);
    }
    Ok(out)
}

/// Inverse STFT via windowed overlap-add with squared-window normalization.
/// Returns `(frames - 1) * hop` samples, aligned with the input of [`stft`].
pub fn istft(spec: &Mat<Complex<f32>>, cfg: &SpectralConfig) -> Result<Vec<f32>, DspError> {
    cfg.validate()?;
    let bins = cfg.bins();
    if spec.cols() != bins || spec.rows() == 0 {
        return Err(DspError::ShapeMismatch {
            expected: format!("T x {bins} with T >= 1"),
            got: format!("{} x {}", spec.rows(), spec.cols()),
        });
    }
    let frames = spec.rows();
    let window = hann_window(cfg.win);
    let offset = (cfg.fft - cfg.win) / 2;
    let padded_len = (frames - 1) * cfg.hop + cfg.fft;

    let mut planner = FftPlanner::<f32>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft);
    let mut buf = vec![Complex::new(0.0f32, 0.0); cfg.fft];
    let mut acc = vec![0.0f64; padded_len];
    let mut norm = vec![0.0f64; padded_len];
    let scale = 1.0 / cfg.fft as f32;

    for t in 0..frames {
        let row = spec.row(t);
        for k in 0..bins {
            buf[k] = row[k];
        }
        for k in bins..cfg.fft {
            buf[k] = row[cfg.fft - k].conj();
        }
        ifft.process(&mut buf);
        let base = t * cfg.hop;
        for (k, &w) in window.iter().enumerate() {
            let y = buf[offset + k].re * scale;
            acc[base + offset + k] += (y * w) as f64;
            norm[base + offset + k] += (w * w) as f64;
        }
    }

    let out_len = (frames - 1) * cfg.hop;
    let lead = cfg.fft / 2;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let j = lead + i;
        out.push((acc[j] / norm[j].max(1e-8)) as f32);
    }
    Ok(out)
}

/// Triangular mel filterbank, `n_mels x (fft/2 + 1)`.
pub fn mel_filterbank(cfg: &SpectralConfig) -> Result<Mat<f32>, DspError> {
    cfg.validate()?;
    let bins = cfg.bins();
    let mel_lo = hz_to_mel(cfg.fmin_hz as f64);
    let mel_hi = hz_to_mel(cfg.fmax_hz as f64);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();

    let bin_hz = cfg.sample_rate_hz as f64 / cfg.fft as f64;
    let mut fb = Mat::zeros(cfg.n_mels, bins);
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut any = false;
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let up = (f - lo) / (center - lo);
            let down = (hi - f) / (hi - center);
            let w = up.min(down).max(0.0);
            if w > 0.0 {
                fb.set(m, k, w as f32);
                any = true;
            }
        }
        if !any {
            return Err(DspError::EmptyFilter { index: m });
        }
    }
    Ok(fb)
}

/// Log-mel spectrogram, `num_frames x n_mels`, natural log with a fixed floor.
pub fn mel_spectrogram(audio: &AudioBuffer, cfg: &SpectralConfig) -> Result<Mat<f32>, DspError> {
    let spec = stft(audio.samples(), cfg)?;
    let fb = mel_filterbank(cfg)?;
    Ok(mel_from_stft(&spec, &fb, cfg))
}

/// Same as [`mel_spectrogram`] but starting from an existing STFT and
/// filterbank (used where the STFT is needed for other features too).
pub fn mel_from_stft(spec: &Mat<Complex<f32>>, fb: &Mat<f32>, cfg: &SpectralConfig) -> Mat<f32> {
    let frames = spec.rows();
    let bins = spec.cols();
    let mut mag = vec![0.0f32; bins];
    let mut out = Mat::zeros(frames, cfg.n_mels);
    for t in 0..frames {
        let row = spec.row(t);
        for k in 0..bins {
            mag[k] = row[k].norm();
        }
        let dst = out.row_mut(t);
        for m in 0..cfg.n_mels {
            let e = crate::mat::dot(fb.row(m), &mag);
            dst[m] = e.max(MEL_FLOOR).ln();
        }
    }
    out
}

/// Non-negative mel-to-linear inversion by multiplicative least-squares
/// updates. `mel` holds linear (not log) mel magnitudes.
fn nnls_linear_from_mel(fb: &Mat<f32>, mel: &[f32], iters: usize) -> Vec<f32> {
    let n_mels = fb.rows();
    let bins = fb.cols();
    debug_assert_eq!(mel.len(), n_mels);

    // b = fb^T mel, fixed numerator
    let mut b = vec![0.0f32; bins];
    for m in 0..n_mels {
        crate::mat::axpy(mel[m], fb.row(m), &mut b);
    }
    let mut a = b.clone();
    let mut u = vec![0.0f32; n_mels];
    let mut v = vec![0.0f32; bins];
    for _ in 0..iters {
        for m in 0..n_mels {
            u[m] = crate::mat::dot(fb.row(m), &a);
        }
        v.iter_mut().for_each(|x| *x = 0.0);
        for m in 0..n_mels {
            crate::mat::axpy(u[m], fb.row(m), &mut v);
        }
        for k in 0..bins {
            a[k] *= b[k] / (v[k] + 1e-10);
        }
    }
    a
}

const NNLS_ITERS: usize = 30;

/// Reconstruct a waveform from a log-mel spectrogram: NNLS lifts mel to linear
/// magnitudes, then classic iterative STFT projection recovers phase from a
/// seeded random start. Deterministic for a given `(mel, iters, seed)`.
pub fn griffin_lim(
    log_mel: &Mat<f32>,
    cfg: &SpectralConfig,
    iters: usize,
    seed: u64,
) -> Result<AudioBuffer, DspError> {
    cfg.validate()?;
    if log_mel.cols() != cfg.n_mels || log_mel.rows() < 2 {
        return Err(DspError::ShapeMismatch {
            expected: format!("T x {} with T >= 2", cfg.n_mels),
            got: format!("{} x {}", log_mel.rows(), log_mel.cols()),
        });
    }
    let frames = log_mel.rows();
    let bins = cfg.bins();
    let fb = mel_filterbank(cfg)?;

    let mut mag = Mat::zeros(frames, bins);
    let mut mel_row = vec![0.0f32; cfg.n_mels];
    for t in 0..frames {
        for (m, v) in log_mel.row(t).iter().enumerate() {
            mel_row[m] = v.exp();
        }
        mag.row_mut(t).copy_from_slice(&nnls_linear_from_mel(&fb, &mel_row, NNLS_ITERS));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = Mat::from_elem(frames, bins, Complex::new(0.0f32, 0.0));
    for t in 0..frames {
        let mrow = mag.row(t);
        let srow = spec.row_mut(t);
        for k in 0..bins {
            let phase: f32 = rng.random_range(-std::f32::consts::PI..std::f32::consts::PI);
            srow[k] = Complex::from_polar(mrow[k], phase);
        }
    }

    for _ in 0..iters {
        let x = istft(&spec, cfg)?;
        let re = stft(&x, cfg)?;
        for t in 0..frames {
            let mrow = mag.row(t);
            // rebuilt STFT can have more frames than the target; extra rows
            // correspond to truncated tail content and are ignored
            if t >= re.rows() {
                break;
            }
            let prow = re.row(t);
            let srow = spec.row_mut(t);
            for k in 0..bins {
                srow[k] = Complex::from_polar(mrow[k], prow[k].arg());
            }
        }
    }

    let mut x = istft(&spec, cfg)?;
    let peak = x.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    if peak > 1.0 {
        let s = 0.99 / peak;
        x.iter_mut().for_each(|v| *v *= s);
    }
    Ok(AudioBuffer::new(x, cfg.sample_rate_hz)?)
}

/// Orthonormal DCT-II of `x`, returning the first `n` coefficients.
pub fn dct_ii(x: &[f32], n: usize) -> Vec<f32> {
    let m = x.len();
    let mut out = Vec::with_capacity(n);
    let norm0 = (1.0 / m as f64).sqrt();
    let norm = (2.0 / m as f64).sqrt();
    for j in 0..n {
        let mut acc = 0.0f64;
        for (i, &xi) in x.iter().enumerate() {
            acc += xi as f64
                * (std::f64::consts::PI * j as f64 * (i as f64 + 0.5) / m as f64).cos();
        }
        out.push((acc * if j == 0 { norm0 } else { norm }) as f32);
    }
    out
}
