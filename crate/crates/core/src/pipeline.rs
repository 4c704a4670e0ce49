//! End-to-end pipelines: corpus items, the training loop, and the three
//! inference paths (score-driven synthesis, conversion with lyrics,
//! lyric-free conversion).
//!
//! Everything here composes the lower layers: features and performance
//! curves become conditioning channels, the diffusion model consumes them,
//! and a [`Checkpoint`] carries the trained state between processes.

use std::fmt;
use std::io::{Cursor, Read, Write};
use std::path::Path;
use std::time::Instant;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::diffusion::{
    ddim_sample, f0_channels, gradient_check_default, loss_and_grad, AdamState,
    ConditioningBundle, ContentSpec, DiffusionError, ModelConfig, ModelDenoiser, ModelParams,
    TrainItem,
};
use crate::dsp::{griffin_lim, log_mel_floor, mel_spectrogram, DspError, SpectralConfig};
use crate::embed::{
    content_encode_local, content_encode_lyrics, style_embed, timbre_embed, EmbedError,
};
use crate::feature::{
    extract_amplitude, extract_f0, f0_statistics, DomainMode, F0Curve, FeatureError,
};
use crate::mat::Mat;
use crate::perform::{
    generate_amplitude, generate_f0_curve, generate_timing, PerformError, PerformanceTiming,
    StyleTable,
};
use crate::score::{
    transpose, AlignedLyrics, AlignedPhoneme, Genre, LyricPhoneme, MusicScore, ScoreError,
    StyleToken, Technique, SILENCE_SYMBOL,
};

pub const DESK_BATCH_SIZE: usize = 8;
pub const DESK_LEARNING_RATE: f64 = 2e-4;
pub const DESK_ITERATIONS: u64 = 20_000;
/// Fast-sampler ladder length used by default at inference.
pub const DEFAULT_DDIM_STEPS: usize = 50;
pub const DEFAULT_GRIFFIN_LIM_ITERS: usize = 60;
/// Octave search half-width for pitch adjustment; wide enough to cover any
/// pairing of the MIDI range with a trackable reference voice.
const OCTAVE_SEARCH: i32 = 8;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Perform(#[from] PerformError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("svc-c trains on singing only; disable mixed data")]
    SvcCMixed,
    #[error("corpus has no {0} items")]
    EmptyCorpus(&'static str),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error(
        "shifting by {wanted} semitones leaves the MIDI range; \
         closest feasible manual shift is {suggested}"
    )]
    TransposeRange { wanted: i32, suggested: i32 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("gradient check failed: max relative error {0:.3e}")]
    GradCheck(f64),
}

// ---------------------------------------------------------------------------
// configuration and corpus types
// ---------------------------------------------------------------------------

/// Which of the three end-to-end systems a checkpoint is trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Score-driven synthesis with generated performance curves.
    Svs,
    /// Conversion conditioned on aligned lyrics.
    SvcB,
    /// Conversion conditioned on signal-derived local content.
    SvcC,
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelVariant::Svs => "svs",
            ModelVariant::SvcB => "svc-b",
            ModelVariant::SvcC => "svc-c",
        })
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "svs" => Ok(ModelVariant::Svs),
            "svc-b" => Ok(ModelVariant::SvcB),
            "svc-c" => Ok(ModelVariant::SvcC),
            other => Err(format!("unknown model variant '{other}' (svs, svc-b, svc-c)")),
        }
    }
}

/// Whether training draws from both domains at a 1:1 ratio or from singing
/// alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    On,
    Off,
}

impl std::str::FromStr for MixMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "on" => Ok(MixMode::On),
            "off" => Ok(MixMode::Off),
            other => Err(format!("unknown mix mode '{other}' (on, off)")),
        }
    }
}

/// Training hyperparameters. Defaults are desk scale; the reference scale
/// (batch 32, 900k iterations) stays reachable through the same fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: ModelVariant,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: u64,
    pub mix: MixMode,
    pub seed: u64,
    /// Run the finite-difference gradient verification before training.
    pub grad_check: bool,
    pub log_every: u64,
    /// Steps between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: ModelVariant::Svs,
            batch_size: DESK_BATCH_SIZE,
            learning_rate: DESK_LEARNING_RATE,
            iterations: DESK_ITERATIONS,
            mix: MixMode::On,
            seed: 0,
            grad_check: false,
            log_every: 100,
            checkpoint_every: 5_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.batch_size == 0 {
            return Err(PipelineError::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(PipelineError::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.iterations == 0 {
            return Err(PipelineError::Config("iterations must be >= 1".into()));
        }
        if self.log_every == 0 {
            return Err(PipelineError::Config("log_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// One training utterance with its annotations.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub audio: AudioBuffer,
    pub domain: DomainMode,
    pub lyrics: AlignedLyrics,
    /// Present iff `domain` is `Singing`.
    pub score: Option<MusicScore>,
    pub speaker: String,
    pub style: StyleToken,
}

impl CorpusItem {
    pub fn validate(&self) -> Result<(), PipelineError> {
        match (self.domain, &self.score) {
            (DomainMode::Singing, None) => {
                Err(PipelineError::Config(format!("singing item '{}' has no score", self.speaker)))
            }
            (DomainMode::Speech, Some(_)) => Err(PipelineError::Config(format!(
                "speech item '{}' must not carry a score",
                self.speaker
            ))),
            _ => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// mel normalization
// ---------------------------------------------------------------------------

/// Affine map taking corpus log-mels into roughly `[-1, 1]` for the
/// diffusion model; the floor maps to -1 and the corpus peak to +1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelStats {
    pub lo: f32,
    pub hi: f32,
}

impl MelStats {
    pub fn from_corpus<'a>(mels: impl IntoIterator<Item = &'a Mat<f32>>) -> Result<Self, PipelineError> {
        let lo = log_mel_floor();
        let mut hi = f32::NEG_INFINITY;
        for m in mels {
            for &v in m.data() {
                hi = hi.max(v);
            }
        }
        if !hi.is_finite() || hi <= lo {
            return Err(PipelineError::Config(
                "corpus has no mel energy above the floor; cannot derive normalization".into(),
            ));
        }
        Ok(MelStats { lo, hi })
    }

    pub fn normalize(&self, log_mel: &Mat<f32>) -> Mat<f32> {
        let scale = 2.0 / (self.hi - self.lo);
        log_mel.map(|v| (v - self.lo) * scale - 1.0)
    }

    pub fn denormalize(&self, normalized: &Mat<f32>) -> Mat<f32> {
        let scale = (self.hi - self.lo) / 2.0;
        normalized.map(|v| (v + 1.0) * scale + self.lo)
    }
}

// ---------------------------------------------------------------------------
// pitch adjustment
// ---------------------------------------------------------------------------

/// Number of octaves minimizing `|r + k|` for `r = log2(source/target)`,
/// ties broken toward smaller `|k|`, then toward the negative shift.
fn octave_steps(r: f64) -> i32 {
    let mut best_k = 0i32;
    let mut best_d = f64::INFINITY;
    for k in -OCTAVE_SEARCH..=OCTAVE_SEARCH {
        let d = (r + k as f64).abs();
        let better = d + 1e-9 < best_d
            || ((d - best_d).abs() <= 1e-9
                && (k.abs() < best_k.abs() || (k.abs() == best_k.abs() && k < best_k)));
        if better {
            best_d = d;
            best_k = k;
        }
    }
    best_k
}

/// Transpose `score` by whole octaves so its median pitch lands within half
/// an octave of the reference voice's median F0. Returns the adjusted score
/// and the applied shift in semitones (always a multiple of 12).
pub fn pitch_adjust(
    score: &MusicScore,
    ref_f0: &F0Curve,
) -> Result<(MusicScore, i32), PipelineError> {
    let m_ref = f0_statistics(ref_f0)?.median_hz as f64;
    let m_score = score.median_note_hz()?;
    let k = octave_steps((m_score / m_ref).log2());
    let shift = 12 * k;
    match transpose(score, shift) {
        Ok(adjusted) => Ok((adjusted, shift)),
        Err(_) => {
            // walk the shift back toward zero until every note fits
            let step = -k.signum();
            let mut k2 = k + step;
            while k2 != 0 && transpose(score, 12 * k2).is_err() {
                k2 += step;
            }
            Err(PipelineError::TransposeRange { wanted: shift, suggested: 12 * k2 })
        }
    }
}

/// Octave shift aligning a source F0 track with a reference voice, by the
/// same rule as [`pitch_adjust`]; used for optional pitch matching in
/// conversion. Returns `k` such that source F0 should scale by `2^k`.
pub fn octave_match_shift(source_f0: &F0Curve, ref_f0: &F0Curve) -> Result<i32, PipelineError> {
    let m_src = f0_statistics(source_f0)?.median_hz as f64;
    let m_ref = f0_statistics(ref_f0)?.median_hz as f64;
    Ok(octave_steps((m_src / m_ref).log2()))
}

// ---------------------------------------------------------------------------
// batch scheduling
// ---------------------------------------------------------------------------

/// Draw one batch of `(domain, within-domain index)` pairs. Each slot is
/// independently Singing with probability 1/2 (always Singing when mixing is
/// off), then uniform within its domain.
pub fn mixed_batch_sampler<T>(
    singing: &[T],
    speech: &[T],
    batch_size: usize,
    mix: MixMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(DomainMode, usize)>, PipelineError> {
    if batch_size == 0 {
        return Err(PipelineError::Config("batch_size must be >= 1".into()));
    }
    if singing.is_empty() {
        return Err(PipelineError::EmptyCorpus("singing"));
    }
    if mix == MixMode::On && speech.is_empty() {
        return Err(PipelineError::EmptyCorpus("speech"));
    }
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let sing = match mix {
            MixMode::Off => true,
            MixMode::On => rng.random_bool(0.5),
        };
        if sing {
            out.push((DomainMode::Singing, rng.random_range(0..singing.len())));
        } else {
            out.push((DomainMode::Speech, rng.random_range(0..speech.len())));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// lyric realization
// ---------------------------------------------------------------------------

/// Realize note-attached lyric phonemes over concrete note spans: phonemes
/// sharing a note split its span evenly, rests (and any lead-in before the
/// first note) become silence. Phonemes landing on a zero-length slice of a
/// very short note are dropped rather than failing the alignment.
pub fn align_lyrics_to_timing(
    lyrics: &[LyricPhoneme],
    score: &MusicScore,
    timing: &PerformanceTiming,
) -> Result<AlignedLyrics, PipelineError> {
    if timing.spans.len() != score.notes.len() {
        return Err(PipelineError::Config(format!(
            "timing has {} spans for {} notes",
            timing.spans.len(),
            score.notes.len()
        )));
    }
    let mut phonemes: Vec<AlignedPhoneme> = Vec::new();
    let mut cursor = 0usize;
    for (i, (&(s, e), note)) in timing.spans.iter().zip(&score.notes).enumerate() {
        let s = s.max(cursor);
        if cursor < s {
            phonemes.push(AlignedPhoneme {
                symbol: SILENCE_SYMBOL.into(),
                note_index: None,
                start_frame: cursor,
                end_frame: s,
            });
        }
        cursor = e.max(s);
        if e <= s {
            continue;
        }
        if note.is_rest() {
            phonemes.push(AlignedPhoneme {
                symbol: SILENCE_SYMBOL.into(),
                note_index: Some(i),
                start_frame: s,
                end_frame: e,
            });
            continue;
        }
        let attached: Vec<&LyricPhoneme> =
            lyrics.iter().filter(|p| p.note_index == i).collect();
        if attached.is_empty() {
            return Err(ScoreError::NoteWithoutLyrics(i).into());
        }
        let span = e - s;
        let m = attached.len();
        for (j, p) in attached.iter().enumerate() {
            let a = s + j * span / m;
            let b = s + (j + 1) * span / m;
            if a < b {
                phonemes.push(AlignedPhoneme {
                    symbol: p.symbol.clone(),
                    note_index: Some(i),
                    start_frame: a,
                    end_frame: b,
                });
            }
        }
    }
    AlignedLyrics::new(phonemes).map_err(Into::into)
}

// ---------------------------------------------------------------------------
// conditioning assembly
// ---------------------------------------------------------------------------

/// Which end of the system is asking for conditioning, with the inputs that
/// mode consumes.
pub enum ConditioningMode<'a> {
    /// Ground-truth channels for a corpus item (training-style conditioning,
    /// also used for reconstruction checks).
    TrainGt { item: &'a CorpusItem },
    /// Score-driven synthesis: performance generation over a score that the
    /// caller has already pitch-adjusted if desired.
    InferSvs {
        score: &'a MusicScore,
        lyrics: &'a [LyricPhoneme],
        style: StyleToken,
        ref_audio: &'a AudioBuffer,
        seed: u64,
    },
    /// Conversion with lyrics: F0/amplitude extracted from the source
    /// singing; content from the provided alignment.
    InferSvcB {
        source: &'a AudioBuffer,
        lyrics: &'a AlignedLyrics,
        style: StyleToken,
        ref_audio: &'a AudioBuffer,
        /// Whole-octave shift applied to the extracted F0 (`2^k`).
        octave_shift: i32,
    },
    /// Lyric-free conversion: content inferred from the source signal.
    InferSvcC {
        source: &'a AudioBuffer,
        style: Option<StyleToken>,
        ref_audio: &'a AudioBuffer,
        octave_shift: i32,
    },
}

/// A conditioning bundle plus the style token it was built with.
pub struct BuiltConditioning {
    pub bundle: ConditioningBundle,
    pub style_token: StyleToken,
}

fn shift_f0_octaves(mut f0: F0Curve, k: i32) -> F0Curve {
    if k != 0 {
        let factor = (k as f32).exp2();
        for v in &mut f0.values_hz {
            *v *= factor;
        }
    }
    f0
}

/// Assemble the model's conditioning channels for one utterance in the
/// requested mode. All frame-rate sequences are guaranteed equal length.
pub fn build_conditioning(
    mode: &ConditioningMode<'_>,
    params: &ModelParams<f32>,
    styles: &StyleTable,
    cfg: &SpectralConfig,
) -> Result<BuiltConditioning, PipelineError> {
    let (f0, amp, content, timbre, token) = match mode {
        ConditioningMode::TrainGt { item } => {
            item.validate()?;
            let f0 = extract_f0(&item.audio, item.domain, cfg)?;
            let amp = extract_amplitude(&item.audio, cfg)?;
            let content = content_encode_lyrics(&item.lyrics, f0.len(), &params.encoder)?;
            let timbre = timbre_embed(&item.audio, cfg)?;
            (f0, amp, content, timbre, item.style)
        }
        ConditioningMode::InferSvs { score, lyrics, style, ref_audio, seed } => {
            let timing = generate_timing(score, cfg, *seed);
            let profile = styles.profile(*style);
            let f0 = generate_f0_curve(score, &timing, profile, cfg, *seed)?;
            let amp = generate_amplitude(score, &timing, profile, cfg, *seed)?;
            let aligned = align_lyrics_to_timing(lyrics, score, &timing)?;
            let content = content_encode_lyrics(&aligned, f0.len(), &params.encoder)?;
            let timbre = timbre_embed(ref_audio, cfg)?;
            (f0, amp, content, timbre, *style)
        }
        ConditioningMode::InferSvcB { source, lyrics, style, ref_audio, octave_shift } => {
            let f0 = shift_f0_octaves(extract_f0(source, DomainMode::Singing, cfg)?, *octave_shift);
            let amp = extract_amplitude(source, cfg)?;
            let content = content_encode_lyrics(lyrics, f0.len(), &params.encoder)?;
            let timbre = timbre_embed(ref_audio, cfg)?;
            (f0, amp, content, timbre, *style)
        }
        ConditioningMode::InferSvcC { source, style, ref_audio, octave_shift } => {
            let f0 = shift_f0_octaves(extract_f0(source, DomainMode::Singing, cfg)?, *octave_shift);
            let amp = extract_amplitude(source, cfg)?;
            let content = content_encode_local(source, cfg)?;
            let timbre = timbre_embed(ref_audio, cfg)?;
            let token = style.unwrap_or(StyleToken {
                genre: Genre::Pop,
                technique: Technique::Normal,
            });
            (f0, amp, content, timbre, token)
        }
    };
    let style_vec = style_embed(token, &params.style_table);
    let bundle = ConditioningBundle::new(f0, amp, content, timbre, style_vec)?;
    Ok(BuiltConditioning { bundle, style_token: token })
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"CANTACKP";
const CHECKPOINT_VERSION: u32 = 1;

/// Hex SHA-256 of the canonical (serde field order) config JSON; printed by
/// tooling and compared when a checkpoint is loaded for inference.
pub fn config_hash_hex(cfg: &ModelConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serialization cannot fail");
    hex(&Sha256::digest(&json))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Trained model state: parameters, mel normalization, and enough RNG
/// provenance to reproduce the run (training noise is derived per step from
/// `(seed, step)`, so `seed` + `steps` is the complete sampler state).
///
/// # Byte layout (version 1, all integers little-endian)
///
/// | field | size |
/// |---|---|
/// | magic `"CANTACKP"` | 8 |
/// | format version (u32) | 4 |
/// | SHA-256 of the config JSON below | 32 |
/// | config JSON length `n` (u32), then JSON | 4 + n |
/// | mel normalization `lo`, `hi` (f32 each) | 8 |
/// | training seed (u64), steps taken (u64) | 16 |
/// | tensor count (u32) | 4 |
///
/// then per tensor, in the model's canonical order: name length (u32), name
/// (UTF-8), element count (u64), elements (f32). Loading rebuilds parameters
/// bit-identically and fails on any digest, name, or length mismatch.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub mel_stats: MelStats,
    pub seed: u64,
    pub steps: u64,
}

impl Checkpoint {
    pub fn config_hash(&self) -> String {
        config_hash_hex(&self.params.cfg)
    }

    /// Fail unless `cfg` hashes identically to the checkpoint's config.
    pub fn verify_config(&self, cfg: &ModelConfig) -> Result<(), PipelineError> {
        let file = self.config_hash();
        let runtime = config_hash_hex(cfg);
        if file != runtime {
            return Err(PipelineError::Checkpoint(format!(
                "config hash mismatch: checkpoint {file}, runtime {runtime}"
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.params.cfg).expect("config serialization cannot fail");
        let digest = Sha256::digest(&json);
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
        out.extend_from_slice(&digest);
        out.write_u32::<LittleEndian>(json.len() as u32).unwrap();
        out.extend_from_slice(&json);
        out.write_f32::<LittleEndian>(self.mel_stats.lo).unwrap();
        out.write_f32::<LittleEndian>(self.mel_stats.hi).unwrap();
        out.write_u64::<LittleEndian>(self.seed).unwrap();
        out.write_u64::<LittleEndian>(self.steps).unwrap();
        let tensors = self.params.tensors();
        out.write_u32::<LittleEndian>(tensors.len() as u32).unwrap();
        for (name, data) in tensors {
            out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
            out.extend_from_slice(name.as_bytes());
            out.write_u64::<LittleEndian>(data.len() as u64).unwrap();
            for &v in data {
                out.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        let bad = |msg: &str| PipelineError::Checkpoint(msg.to_string());
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic; not a checkpoint file"));
        }
        let version = cur.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(PipelineError::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let mut digest = [0u8; 32];
        cur.read_exact(&mut digest)?;
        let json_len = cur.read_u32::<LittleEndian>()? as usize;
        if json_len > 1 << 20 {
            return Err(bad("config JSON length is implausible"));
        }
        let mut json = vec![0u8; json_len];
        cur.read_exact(&mut json)?;
        if Sha256::digest(&json)[..] != digest {
            return Err(bad("config digest mismatch; file is corrupt"));
        }
        let cfg: ModelConfig = serde_json::from_slice(&json)
            .map_err(|e| PipelineError::Checkpoint(format!("config JSON: {e}")))?;
        let lo = cur.read_f32::<LittleEndian>()?;
        let hi = cur.read_f32::<LittleEndian>()?;
        let seed = cur.read_u64::<LittleEndian>()?;
        let steps = cur.read_u64::<LittleEndian>()?;
        let count = cur.read_u32::<LittleEndian>()? as usize;

        let mut params = ModelParams::<f32>::init(&cfg, 0)?;
        let mut tensors = params.tensors_mut();
        if count != tensors.len() {
            return Err(PipelineError::Checkpoint(format!(
                "tensor count {count} does not match the config's {}",
                tensors.len()
            )));
        }
        for (name, data) in tensors.iter_mut() {
            let name_len = cur.read_u32::<LittleEndian>()? as usize;
            if name_len > 1 << 12 {
                return Err(bad("tensor name length is implausible"));
            }
            let mut raw = vec![0u8; name_len];
            cur.read_exact(&mut raw)?;
            let stored = String::from_utf8(raw).map_err(|_| bad("tensor name is not UTF-8"))?;
            if &stored != name {
                return Err(PipelineError::Checkpoint(format!(
                    "tensor order mismatch: file has '{stored}' where '{name}' belongs"
                )));
            }
            let n = cur.read_u64::<LittleEndian>()? as usize;
            if n != data.len() {
                return Err(PipelineError::Checkpoint(format!(
                    "tensor '{name}' has {n} elements, expected {}",
                    data.len()
                )));
            }
            for v in data.iter_mut() {
                *v = cur.read_f32::<LittleEndian>()?;
            }
        }
        drop(tensors);
        if cur.position() != bytes.len() as u64 {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok(Checkpoint { params, mel_stats: MelStats { lo, hi }, seed, steps })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// One structured log line of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

/// Summary returned next to the final checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub entries: Vec<TrainLogEntry>,
    pub final_loss: f64,
    pub param_count: usize,
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-step RNG stream: independent of batch composition at other steps, so
/// a run is reproducible from `(seed, step)` alone.
fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(step)))
}

fn gaussian_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat<f32> {
    Mat::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z as f32
    })
}

/// Turn an annotated utterance into the tensors one training step consumes:
/// normalized mel target plus the conditioning channels in training form.
pub fn prepare_train_item(
    item: &CorpusItem,
    variant: ModelVariant,
    stats: &MelStats,
    cfg: &SpectralConfig,
) -> Result<TrainItem<f32>, PipelineError> {
    let x0 = stats.normalize(&mel_spectrogram(&item.audio, cfg)?);
    let frames = x0.rows();
    let f0 = extract_f0(&item.audio, item.domain, cfg)?;
    let (f0_log2, voiced) = f0_channels(&f0);
    let amp = extract_amplitude(&item.audio, cfg)?;
    let timbre = timbre_embed(&item.audio, cfg)?.values().to_vec();
    let content = match variant {
        // the lyric-free system trains against signal-derived content, so
        // inference never needs an alignment
        ModelVariant::SvcC => ContentSpec::Fixed(content_encode_local(&item.audio, cfg)?.frames),
        _ => ContentSpec::Lyric(item.lyrics.frame_symbols(frames)?),
    };
    Ok(TrainItem {
        x0,
        f0_log2,
        voiced,
        amp: amp.values,
        timbre,
        style_index: item.style.index(),
        content,
    })
}

/// Train a model variant on a corpus and return the final checkpoint plus a
/// run report. Periodic checkpoints go to `checkpoint_dir` when given;
/// structured log lines (JSONL) go to `manifest` when given. Fully
/// reproducible: the same config and corpus yield a byte-identical
/// checkpoint.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    spectral: &SpectralConfig,
    corpus: &[CorpusItem],
    checkpoint_dir: Option<&Path>,
    mut manifest: Option<&mut dyn Write>,
) -> Result<(Checkpoint, TrainReport), PipelineError> {
    cfg.validate()?;
    model_cfg.validate()?;
    if cfg.variant == ModelVariant::SvcC && cfg.mix == MixMode::On {
        return Err(PipelineError::SvcCMixed);
    }
    for item in corpus {
        item.validate()?;
    }
    let singing: Vec<&CorpusItem> =
        corpus.iter().filter(|i| i.domain == DomainMode::Singing).collect();
    let speech: Vec<&CorpusItem> =
        corpus.iter().filter(|i| i.domain == DomainMode::Speech).collect();
    if singing.is_empty() {
        return Err(PipelineError::EmptyCorpus("singing"));
    }
    if cfg.mix == MixMode::On && speech.is_empty() {
        return Err(PipelineError::EmptyCorpus("speech"));
    }

    // normalization stats over exactly the items the run will see
    let mut mels = Vec::new();
    for item in singing.iter().chain(if cfg.mix == MixMode::On { &speech[..] } else { &[] }) {
        mels.push(mel_spectrogram(&item.audio, spectral)?);
    }
    let mel_stats = MelStats::from_corpus(&mels)?;

    let singing_items: Vec<TrainItem<f32>> = singing
        .iter()
        .map(|i| prepare_train_item(i, cfg.variant, &mel_stats, spectral))
        .collect::<Result<_, _>>()?;
    let speech_items: Vec<TrainItem<f32>> = if cfg.mix == MixMode::On {
        speech
            .iter()
            .map(|i| prepare_train_item(i, cfg.variant, &mel_stats, spectral))
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };

    if cfg.grad_check {
        let report = gradient_check_default(cfg.seed)?;
        if !report.passed {
            return Err(PipelineError::GradCheck(report.max_rel_err));
        }
    }

    let schedule = model_cfg.schedule()?;
    let mut params = ModelParams::<f32>::init(model_cfg, cfg.seed)?;
    let mut grads = params.zeros_like();
    let mut adam = AdamState::new(&params);
    let param_count = params.param_count();

    let started = Instant::now();
    let mut entries = Vec::new();
    let mut last_loss = f64::NAN;
    for step in 1..=cfg.iterations {
        let mut rng = step_rng(cfg.seed, step);
        let picks =
            mixed_batch_sampler(&singing_items, &speech_items, cfg.batch_size, cfg.mix, &mut rng)?;
        let batch: Vec<TrainItem<f32>> = picks
            .iter()
            .map(|&(d, i)| match d {
                DomainMode::Singing => singing_items[i].clone(),
                DomainMode::Speech => speech_items[i].clone(),
            })
            .collect();
        let draws: Vec<(usize, Mat<f32>)> = batch
            .iter()
            .map(|item| {
                let t = rng.random_range(1..=model_cfg.t_steps);
                let eps = gaussian_mat(item.frames(), model_cfg.n_mels, &mut rng);
                (t, eps)
            })
            .collect();

        for (_, g) in grads.tensors_mut() {
            g.fill(0.0);
        }
        let loss = loss_and_grad(&params, &batch, &draws, &schedule, &mut grads)?;
        if !loss.is_finite() {
            return Err(PipelineError::Diverged { step, loss });
        }
        adam.update(&mut params, &grads, cfg.learning_rate);
        last_loss = loss;

        if step % cfg.log_every == 0 || step == cfg.iterations {
            let entry = TrainLogEntry {
                step,
                loss,
                lr: cfg.learning_rate,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            if let Some(w) = manifest.as_deref_mut() {
                writeln!(w, "{}", serde_json::to_string(&entry).expect("log entry serializes"))?;
            }
            entries.push(entry);
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.iterations {
            if let Some(dir) = checkpoint_dir {
                let snap = Checkpoint {
                    params: params.clone(),
                    mel_stats,
                    seed: cfg.seed,
                    steps: step,
                };
                snap.save(dir.join(format!("ckpt-{step:07}.bin")))?;
            }
        }
    }

    let checkpoint =
        Checkpoint { params, mel_stats, seed: cfg.seed, steps: cfg.iterations };
    Ok((checkpoint, TrainReport { entries, final_loss: last_loss, param_count }))
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

/// Shared knobs for the three inference paths. `pitch_adjust` applies to
/// score-driven synthesis; `octave_match` to the conversion paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceOptions {
    pub steps: usize,
    pub eta: f64,
    pub seed: u64,
    pub pitch_adjust: bool,
    pub octave_match: bool,
    pub griffin_lim_iters: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            steps: DEFAULT_DDIM_STEPS,
            eta: 0.0,
            seed: 0,
            pitch_adjust: true,
            octave_match: false,
            griffin_lim_iters: DEFAULT_GRIFFIN_LIM_ITERS,
        }
    }
}

/// Sidecar report written next to every synthesized or converted waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub shift_semitones: i32,
    pub frames: usize,
    pub steps: usize,
    pub seed: u64,
}

fn diffuse_to_audio(
    ckpt: &Checkpoint,
    bundle: &ConditioningBundle,
    opts: &InferenceOptions,
    cfg: &SpectralConfig,
) -> Result<AudioBuffer, PipelineError> {
    let schedule = ckpt.params.cfg.schedule()?;
    let denoiser = ModelDenoiser { params: &ckpt.params, cond: bundle };
    let mel = ddim_sample(
        &denoiser,
        &schedule,
        bundle.frames(),
        ckpt.params.cfg.n_mels,
        opts.steps,
        opts.eta,
        opts.seed,
    )?;
    let log_mel = ckpt.mel_stats.denormalize(&mel);
    // decouple the vocoder's phase-init stream from the sampler's noise
    let audio = griffin_lim(&log_mel, cfg, opts.griffin_lim_iters, splitmix64(opts.seed))?;
    Ok(audio)
}

/// Sing a score in the voice of `ref_audio`: octave-adjust the score toward
/// the reference register (unless disabled), render performance curves,
/// encode conditioning, run the fast sampler, and invert the mel.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_svs(
    score: &MusicScore,
    lyrics: &[LyricPhoneme],
    style: StyleToken,
    ref_audio: &AudioBuffer,
    ckpt: &Checkpoint,
    styles: &StyleTable,
    cfg: &SpectralConfig,
    opts: &InferenceOptions,
) -> Result<(AudioBuffer, SynthesisReport), PipelineError> {
    let (adjusted, shift) = if opts.pitch_adjust {
        let ref_f0 = extract_f0(ref_audio, DomainMode::Speech, cfg)?;
        pitch_adjust(score, &ref_f0)?
    } else {
        (score.clone(), 0)
    };
    let mode = ConditioningMode::InferSvs {
        score: &adjusted,
        lyrics,
        style,
        ref_audio,
        seed: opts.seed,
    };
    let built = build_conditioning(&mode, &ckpt.params, styles, cfg)?;
    let frames = built.bundle.frames();
    let audio = diffuse_to_audio(ckpt, &built.bundle, opts, cfg)?;
    Ok((audio, SynthesisReport { shift_semitones: shift, frames, steps: opts.steps, seed: opts.seed }))
}

/// Convert a singing sample to the reference voice, keeping its own F0 and
/// amplitude and re-encoding content from the provided lyric alignment.
pub fn convert_svc_b(
    source: &AudioBuffer,
    lyrics: &AlignedLyrics,
    style: StyleToken,
    ref_audio: &AudioBuffer,
    ckpt: &Checkpoint,
    cfg: &SpectralConfig,
    opts: &InferenceOptions,
) -> Result<(AudioBuffer, SynthesisReport), PipelineError> {
    let k = conversion_octaves(source, ref_audio, cfg, opts)?;
    let mode = ConditioningMode::InferSvcB { source, lyrics, style, ref_audio, octave_shift: k };
    let built = build_conditioning(&mode, &ckpt.params, &StyleTable::default(), cfg)?;
    let frames = built.bundle.frames();
    let audio = diffuse_to_audio(ckpt, &built.bundle, opts, cfg)?;
    Ok((audio, SynthesisReport {
        shift_semitones: 12 * k,
        frames,
        steps: opts.steps,
        seed: opts.seed,
    }))
}

/// Convert a singing sample to the reference voice with no lyrics at all;
/// content comes from the source signal. Style defaults to pop:normal.
pub fn convert_svc_c(
    source: &AudioBuffer,
    style: Option<StyleToken>,
    ref_audio: &AudioBuffer,
    ckpt: &Checkpoint,
    cfg: &SpectralConfig,
    opts: &InferenceOptions,
) -> Result<(AudioBuffer, SynthesisReport), PipelineError> {
    let k = conversion_octaves(source, ref_audio, cfg, opts)?;
    let mode = ConditioningMode::InferSvcC { source, style, ref_audio, octave_shift: k };
    let built = build_conditioning(&mode, &ckpt.params, &StyleTable::default(), cfg)?;
    let frames = built.bundle.frames();
    let audio = diffuse_to_audio(ckpt, &built.bundle, opts, cfg)?;
    Ok((audio, SynthesisReport {
        shift_semitones: 12 * k,
        frames,
        steps: opts.steps,
        seed: opts.seed,
    }))
}

fn conversion_octaves(
    source: &AudioBuffer,
    ref_audio: &AudioBuffer,
    cfg: &SpectralConfig,
    opts: &InferenceOptions,
) -> Result<i32, PipelineError> {
    if !opts.octave_match {
        return Ok(0);
    }
    let src_f0 = extract_f0(source, DomainMode::Singing, cfg)?;
    let ref_f0 = extract_f0(ref_audio, DomainMode::Speech, cfg)?;
    octave_match_shift(&src_f0, &ref_f0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::PIPELINE_SAMPLE_RATE;
    use crate::score::Note;

    fn cfg() -> SpectralConfig {
        SpectralConfig::default()
    }

    /// Harmonic voice with a little vibrato; enough structure for F0
    /// tracking, timbre statistics, and mel inversion to behave.
    fn voice(f0_start: f32, f0_end: f32, secs: f32, seed: u64) -> AudioBuffer {
        let sr = PIPELINE_SAMPLE_RATE as f32;
        let n = (secs * sr) as usize;
        let n_harm = 12usize;
        let mut phases = vec![0.0f64; n_harm];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut phases {
            *p = rng.random_range(0.0..std::f64::consts::TAU);
        }
        let mut out = Vec::with_capacity(n);
        let mut phase = 0.0f64;
        for i in 0..n {
            let u = i as f32 / n as f32;
            let vib = (2.0f32).powf(40.0 / 1200.0
                * (std::f32::consts::TAU * 5.5 * i as f32 / sr).sin());
            let f = (f0_start + (f0_end - f0_start) * u) * vib;
            phase += std::f64::consts::TAU * f as f64 / sr as f64;
            let mut s = 0.0f64;
            for (h, &p0) in phases.iter().enumerate() {
                let k = (h + 1) as f64;
                s += (phase * k + p0).sin() / k;
            }
            out.push((0.35 * s) as f32);
        }
        AudioBuffer::new(out, PIPELINE_SAMPLE_RATE).unwrap()
    }

    fn flat_f0(hz: f32, frames: usize) -> F0Curve {
        F0Curve { values_hz: vec![hz; frames], voiced: vec![true; frames], hop: 256 }
    }

    fn score_of(midis: &[Option<u8>]) -> MusicScore {
        let notes = midis
            .iter()
            .enumerate()
            .map(|(i, &m)| Note { midi: m, onset_beats: i as f64, duration_beats: 1.0 })
            .collect();
        MusicScore::new(notes, 120.0, "en").unwrap()
    }

    fn pop() -> StyleToken {
        StyleToken { genre: Genre::Pop, technique: Technique::Normal }
    }

    fn lyr(symbol: &str, note_index: usize) -> LyricPhoneme {
        LyricPhoneme { symbol: symbol.into(), note_index }
    }

    /// Tiny but full-width model config: real conditioning dims, few
    /// channels, short schedule. Training and inference stay sub-second.
    fn test_model_cfg() -> ModelConfig {
        ModelConfig {
            channels: 8,
            dilations: vec![1, 2],
            phoneme_embed_dim: 8,
            step_dim: 16,
            step_hidden: 24,
            step_out: 12,
            t_steps: 40,
            ..ModelConfig::default()
        }
    }

    fn singing_item(speaker: &str, f0: (f32, f32), seed: u64) -> CorpusItem {
        let audio = voice(f0.0, f0.1, 1.5, seed);
        let frames = cfg().num_frames(audio.len());
        let score = score_of(&[Some(60), Some(64), Some(67)]);
        let lyrics = AlignedLyrics::new(vec![
            AlignedPhoneme {
                symbol: "a".into(),
                note_index: Some(0),
                start_frame: 0,
                end_frame: frames / 2,
            },
            AlignedPhoneme {
                symbol: "i".into(),
                note_index: Some(1),
                start_frame: frames / 2,
                end_frame: frames + 8,
            },
        ])
        .unwrap();
        CorpusItem {
            audio,
            domain: DomainMode::Singing,
            lyrics,
            score: Some(score),
            speaker: speaker.into(),
            style: pop(),
        }
    }

    fn speech_item(speaker: &str, seed: u64) -> CorpusItem {
        let audio = voice(140.0, 180.0, 1.5, seed);
        let frames = cfg().num_frames(audio.len());
        let lyrics = AlignedLyrics::new(vec![AlignedPhoneme {
            symbol: "e".into(),
            note_index: None,
            start_frame: 0,
            end_frame: frames + 8,
        }])
        .unwrap();
        CorpusItem {
            audio,
            domain: DomainMode::Speech,
            lyrics,
            score: None,
            speaker: speaker.into(),
            style: pop(),
        }
    }

    // -- pitch adjustment ---------------------------------------------------

    #[test]
    fn octave_rule_examples() {
        // 440 Hz score vs 220 Hz voice: down one octave
        let (adj, shift) = pitch_adjust(&score_of(&[Some(69)]), &flat_f0(220.0, 50)).unwrap();
        assert_eq!(shift, -12);
        assert_eq!(adj.notes[0].midi, Some(57));

        // already aligned: unchanged
        let (adj, shift) = pitch_adjust(&score_of(&[Some(57)]), &flat_f0(220.0, 50)).unwrap();
        assert_eq!(shift, 0);
        assert_eq!(adj.notes[0].midi, Some(57));

        // 220 Hz score vs 500 Hz voice: up one octave (|log2(440/500)| wins)
        let (adj, shift) = pitch_adjust(&score_of(&[Some(57)]), &flat_f0(500.0, 50)).unwrap();
        assert_eq!(shift, 12);
        assert_eq!(adj.notes[0].midi, Some(69));
    }

    #[test]
    fn octave_rule_lands_within_half_octave() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let midi = rng.random_range(40u8..=95);
            let ref_hz = rng.random_range(80.0f32..600.0);
            let score = score_of(&[Some(midi)]);
            let (adj, shift) = pitch_adjust(&score, &flat_f0(ref_hz, 30)).unwrap();
            assert_eq!(shift % 12, 0);
            let m = adj.median_note_hz().unwrap();
            let dist = (m / ref_hz as f64).log2().abs();
            assert!(dist <= 0.5 + 1e-9, "midi {midi} ref {ref_hz}: {dist}");
        }
    }

    #[test]
    fn octave_tie_breaks() {
        // exact half-octave ties prefer the smaller |k|
        assert_eq!(octave_steps(0.5), 0);
        assert_eq!(octave_steps(-0.5), 0);
        assert_eq!(octave_steps(1.5), -1);
        assert_eq!(octave_steps(-1.5), 1);
        assert_eq!(octave_steps(2.0), -2);
    }

    #[test]
    fn octave_rule_rejects_unvoiced_reference() {
        let silent = F0Curve { values_hz: vec![0.0; 20], voiced: vec![false; 20], hop: 256 };
        assert!(matches!(
            pitch_adjust(&score_of(&[Some(69)]), &silent),
            Err(PipelineError::Feature(_))
        ));
    }

    #[test]
    fn octave_rule_reports_infeasible_shifts() {
        // median is high but one note sits at the very bottom of the range,
        // so the wanted -48 cannot apply; neither can any partial shift
        let score = score_of(&[Some(21), Some(98), Some(99)]);
        let err = pitch_adjust(&score, &flat_f0(82.0, 40)).unwrap_err();
        match err {
            PipelineError::TransposeRange { wanted, suggested } => {
                assert_eq!(wanted, -60);
                assert_eq!(suggested, 0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    // -- batch sampling -------------------------------------------------------

    #[test]
    fn sampler_mixes_domains_evenly() {
        let singing = vec![0u8; 7];
        let speech = vec![0u8; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws =
            mixed_batch_sampler(&singing, &speech, 10_000, MixMode::On, &mut rng).unwrap();
        let n_sing = draws.iter().filter(|(d, _)| *d == DomainMode::Singing).count();
        assert!((4900..=5100).contains(&n_sing), "singing draws {n_sing}");
        for &(d, i) in &draws {
            let limit = if d == DomainMode::Singing { singing.len() } else { speech.len() };
            assert!(i < limit);
        }
    }

    #[test]
    fn sampler_is_deterministic_and_respects_mix_off() {
        let singing = vec![0u8; 4];
        let speech = vec![0u8; 4];
        let a = mixed_batch_sampler(
            &singing,
            &speech,
            64,
            MixMode::On,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let b = mixed_batch_sampler(
            &singing,
            &speech,
            64,
            MixMode::On,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert_eq!(a, b);

        let off = mixed_batch_sampler(
            &singing,
            &[] as &[u8],
            64,
            MixMode::Off,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert!(off.iter().all(|(d, _)| *d == DomainMode::Singing));
    }

    #[test]
    fn sampler_rejects_empty_required_corpora() {
        let some = vec![0u8; 2];
        let none: Vec<u8> = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            mixed_batch_sampler(&none, &some, 4, MixMode::Off, &mut rng),
            Err(PipelineError::EmptyCorpus("singing"))
        ));
        assert!(matches!(
            mixed_batch_sampler(&some, &none, 4, MixMode::On, &mut rng),
            Err(PipelineError::EmptyCorpus("speech"))
        ));
    }

    // -- lyric realization ----------------------------------------------------

    #[test]
    fn lyrics_split_notes_and_fill_rests() {
        let score = score_of(&[Some(60), None, Some(64)]);
        let timing = PerformanceTiming { spans: vec![(0, 10), (10, 14), (14, 20)] };
        let lyrics = vec![lyr("k", 0), lyr("a", 0), lyr("a", 2)];
        let aligned = align_lyrics_to_timing(&lyrics, &score, &timing).unwrap();
        let spans: Vec<(String, usize, usize)> = aligned
            .phonemes
            .iter()
            .map(|p| (p.symbol.clone(), p.start_frame, p.end_frame))
            .collect();
        assert_eq!(
            spans,
            vec![
                ("k".into(), 0, 5),
                ("a".into(), 5, 10),
                ("sil".into(), 10, 14),
                ("a".into(), 14, 20),
            ]
        );
        assert_eq!(aligned.total_frames(), timing.total_frames());
        aligned.frame_symbols(20).unwrap();
    }

    #[test]
    fn lyrics_cover_a_lead_in_with_silence() {
        let score = score_of(&[Some(60)]);
        let timing = PerformanceTiming { spans: vec![(4, 9)] };
        let aligned = align_lyrics_to_timing(&[lyr("o", 0)], &score, &timing).unwrap();
        assert_eq!(aligned.phonemes[0].symbol, SILENCE_SYMBOL);
        assert_eq!(aligned.phonemes[0].start_frame, 0);
        assert_eq!(aligned.phonemes[0].end_frame, 4);
        aligned.frame_symbols(9).unwrap();
    }

    #[test]
    fn lyrics_missing_for_a_note_is_an_error() {
        let score = score_of(&[Some(60), Some(62)]);
        let timing = PerformanceTiming { spans: vec![(0, 5), (5, 9)] };
        assert!(align_lyrics_to_timing(&[lyr("a", 0)], &score, &timing).is_err());
    }

    // -- normalization ----------------------------------------------------------

    #[test]
    fn mel_stats_map_floor_and_peak_to_unit_range() {
        let mut m = Mat::zeros(3, 4);
        m.set(0, 0, log_mel_floor());
        m.set(2, 3, 1.75);
        let stats = MelStats::from_corpus([&m]).unwrap();
        let n = stats.normalize(&m);
        assert!((n.get(0, 0) + 1.0).abs() < 1e-6);
        assert!((n.get(2, 3) - 1.0).abs() < 1e-6);
        let back = stats.denormalize(&n);
        for (a, b) in back.data().iter().zip(m.data().iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn mel_stats_need_energy_above_the_floor() {
        let m = Mat::from_elem(2, 2, log_mel_floor());
        assert!(MelStats::from_corpus([&m]).is_err());
    }

    // -- conditioning -------------------------------------------------------------

    #[test]
    fn ground_truth_conditioning_obeys_the_length_contract() {
        let item = singing_item("sp0", (200.0, 240.0), 1);
        let params = ModelParams::<f32>::init(&test_model_cfg(), 0).unwrap();
        let built = build_conditioning(
            &ConditioningMode::TrainGt { item: &item },
            &params,
            &StyleTable::default(),
            &cfg(),
        )
        .unwrap();
        let frames = cfg().num_frames(item.audio.len());
        assert_eq!(built.bundle.frames(), frames);
        assert_eq!(built.bundle.content.frames.cols(), crate::embed::CONTENT_DIM);
        assert_eq!(built.style_token, item.style);
    }

    #[test]
    fn conversion_modes_share_channels_but_not_content() {
        let item = singing_item("sp0", (210.0, 250.0), 3);
        let reference = voice(150.0, 150.0, 1.5, 9);
        let params = ModelParams::<f32>::init(&test_model_cfg(), 0).unwrap();
        let styles = StyleTable::default();
        let b = build_conditioning(
            &ConditioningMode::InferSvcB {
                source: &item.audio,
                lyrics: &item.lyrics,
                style: pop(),
                ref_audio: &reference,
                octave_shift: 0,
            },
            &params,
            &styles,
            &cfg(),
        )
        .unwrap();
        let c = build_conditioning(
            &ConditioningMode::InferSvcC {
                source: &item.audio,
                style: None,
                ref_audio: &reference,
                octave_shift: 0,
            },
            &params,
            &styles,
            &cfg(),
        )
        .unwrap();
        assert_eq!(b.bundle.f0, c.bundle.f0);
        assert_eq!(b.bundle.amp, c.bundle.amp);
        assert_eq!(c.style_token, pop());
        let diff: f32 = b
            .bundle
            .content
            .frames
            .data()
            .iter()
            .zip(c.bundle.content.frames.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-3, "content channels should differ, diff {diff}");
    }

    #[test]
    fn score_conditioning_matches_the_generated_timing() {
        let score = score_of(&[Some(62), Some(65)]);
        let lyrics = vec![lyr("d", 0), lyr("o", 0), lyr("r", 1), lyr("e", 1)];
        let reference = voice(150.0, 150.0, 1.5, 2);
        let params = ModelParams::<f32>::init(&test_model_cfg(), 0).unwrap();
        let built = build_conditioning(
            &ConditioningMode::InferSvs {
                score: &score,
                lyrics: &lyrics,
                style: pop(),
                ref_audio: &reference,
                seed: 4,
            },
            &params,
            &StyleTable::default(),
            &cfg(),
        )
        .unwrap();
        let timing = generate_timing(&score, &cfg(), 4);
        assert_eq!(built.bundle.frames(), timing.total_frames());
    }

    // -- checkpoints -----------------------------------------------------------------

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let params = ModelParams::<f32>::init(&test_model_cfg(), 3).unwrap();
        let ckpt = Checkpoint {
            params,
            mel_stats: MelStats { lo: log_mel_floor(), hi: 1.25 },
            seed: 3,
            steps: 42,
        };
        let bytes = ckpt.to_bytes();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.params.cfg, ckpt.params.cfg);
        assert_eq!(loaded.mel_stats, ckpt.mel_stats);
        assert_eq!(loaded.seed, 3);
        assert_eq!(loaded.steps, 42);
        for ((na, a), (nb, b)) in ckpt.params.tensors().iter().zip(loaded.params.tensors()) {
            assert_eq!(na, &nb);
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "tensor {na}"
            );
        }
        assert_eq!(bytes, loaded.to_bytes());
        ckpt.verify_config(&test_model_cfg()).unwrap();
        assert!(ckpt.verify_config(&ModelConfig::default()).is_err());
    }

    #[test]
    fn checkpoint_detects_corruption() {
        let params = ModelParams::<f32>::init(&test_model_cfg(), 3).unwrap();
        let ckpt = Checkpoint {
            params,
            mel_stats: MelStats { lo: -11.5, hi: 1.0 },
            seed: 0,
            steps: 1,
        };
        let good = ckpt.to_bytes();

        let mut flipped = good.clone();
        flipped[60] ^= 0x01; // inside the config JSON
        assert!(matches!(
            Checkpoint::from_bytes(&flipped),
            Err(PipelineError::Checkpoint(msg)) if msg.contains("digest")
        ));

        let truncated = &good[..good.len() - 3];
        assert!(Checkpoint::from_bytes(truncated).is_err());

        let mut wrong_version = good.clone();
        wrong_version[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&wrong_version),
            Err(PipelineError::Checkpoint(msg)) if msg.contains("version")
        ));
    }

    // -- training ------------------------------------------------------------------------

    fn small_train_cfg() -> TrainConfig {
        TrainConfig {
            variant: ModelVariant::Svs,
            batch_size: 2,
            learning_rate: 2e-3,
            iterations: 60,
            mix: MixMode::Off,
            seed: 7,
            grad_check: false,
            log_every: 10,
            checkpoint_every: 0,
        }
    }

    fn small_corpus() -> Vec<CorpusItem> {
        vec![singing_item("sp0", (200.0, 240.0), 1), singing_item("sp1", (230.0, 200.0), 2)]
    }

    #[test]
    fn training_reduces_the_loss() {
        let corpus = small_corpus();
        let mut manifest = Vec::new();
        let (ckpt, report) = train(
            &small_train_cfg(),
            &test_model_cfg(),
            &cfg(),
            &corpus,
            None,
            Some(&mut manifest),
        )
        .unwrap();
        assert_eq!(ckpt.steps, 60);
        assert!(report.entries.len() >= 6);
        let first = report.entries.first().unwrap().loss;
        let last = report.entries.last().unwrap().loss;
        assert!(last < first, "loss should drop: {first} -> {last}");
        assert_eq!(report.param_count, ckpt.params.param_count());

        // manifest is one JSON object per logged step
        let lines: Vec<TrainLogEntry> = String::from_utf8(manifest)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), report.entries.len());
        assert_eq!(lines[0].step, report.entries[0].step);
    }

    #[test]
    fn training_is_reproducible_byte_for_byte() {
        let corpus = small_corpus();
        let mut tc = small_train_cfg();
        tc.iterations = 25;
        let (a, _) = train(&tc, &test_model_cfg(), &cfg(), &corpus, None, None).unwrap();
        let (b, _) = train(&tc, &test_model_cfg(), &cfg(), &corpus, None, None).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn lyric_free_variant_refuses_mixed_data() {
        let mut tc = small_train_cfg();
        tc.variant = ModelVariant::SvcC;
        tc.mix = MixMode::On;
        let err = train(&tc, &test_model_cfg(), &cfg(), &small_corpus(), None, None).unwrap_err();
        assert!(matches!(err, PipelineError::SvcCMixed));
        assert!(err.to_string().contains("svc-c trains on singing only"));
    }

    #[test]
    fn mixed_training_consumes_both_domains() {
        let mut corpus = small_corpus();
        corpus.push(speech_item("sp2", 5));
        let mut tc = small_train_cfg();
        tc.mix = MixMode::On;
        tc.iterations = 8;
        let (ckpt, _) = train(&tc, &test_model_cfg(), &cfg(), &corpus, None, None).unwrap();
        assert_eq!(ckpt.steps, 8);

        // dropping the speech items makes mixed training impossible
        let err = train(&tc, &test_model_cfg(), &cfg(), &small_corpus(), None, None).unwrap_err();
        assert!(matches!(err, PipelineError::EmptyCorpus("speech")));
    }

    #[test]
    fn divergence_guard_aborts_on_non_finite_loss() {
        let mut tc = small_train_cfg();
        tc.learning_rate = 1e30;
        tc.iterations = 10;
        let err = train(&tc, &test_model_cfg(), &cfg(), &small_corpus(), None, None).unwrap_err();
        assert!(matches!(err, PipelineError::Diverged { .. }), "got {err:?}");
    }

    #[test]
    fn periodic_checkpoints_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut tc = small_train_cfg();
        tc.iterations = 6;
        tc.checkpoint_every = 2;
        train(&tc, &test_model_cfg(), &cfg(), &small_corpus(), Some(dir.path()), None).unwrap();
        assert!(dir.path().join("ckpt-0000002.bin").exists());
        assert!(dir.path().join("ckpt-0000004.bin").exists());
        // the final state is returned, not duplicated on disk
        assert!(!dir.path().join("ckpt-0000006.bin").exists());
        let snap = Checkpoint::load(dir.path().join("ckpt-0000004.bin")).unwrap();
        assert_eq!(snap.steps, 4);
    }

    // -- inference ----------------------------------------------------------------------------

    fn quick_ckpt() -> Checkpoint {
        let params = ModelParams::<f32>::init(&test_model_cfg(), 12).unwrap();
        Checkpoint {
            params,
            mel_stats: MelStats { lo: log_mel_floor(), hi: 1.0 },
            seed: 12,
            steps: 0,
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_length_correct() {
        let score = score_of(&[Some(64), Some(67)]);
        let lyrics = vec![lyr("l", 0), lyr("a", 0), lyr("l", 1), lyr("a", 1)];
        let reference = voice(150.0, 150.0, 1.5, 20);
        let ckpt = quick_ckpt();
        let opts = InferenceOptions {
            steps: 8,
            griffin_lim_iters: 4,
            ..InferenceOptions::default()
        };
        let (a1, r1) = synthesize_svs(
            &score,
            &lyrics,
            pop(),
            &reference,
            &ckpt,
            &StyleTable::default(),
            &cfg(),
            &opts,
        )
        .unwrap();
        let (a2, r2) = synthesize_svs(
            &score,
            &lyrics,
            pop(),
            &reference,
            &ckpt,
            &StyleTable::default(),
            &cfg(),
            &opts,
        )
        .unwrap();
        assert_eq!(r1, r2);
        assert_eq!(a1.samples(), a2.samples());
        // vocoder output spans (frames - 1) hops
        assert_eq!(a1.len(), (r1.frames - 1) * cfg().hop);
        assert_eq!(r1.shift_semitones % 12, 0);

        let (a3, _) = synthesize_svs(
            &score,
            &lyrics,
            pop(),
            &reference,
            &ckpt,
            &StyleTable::default(),
            &cfg(),
            &InferenceOptions { seed: 1, ..opts },
        )
        .unwrap();
        assert_ne!(a1.samples(), a3.samples());
    }

    #[test]
    fn conversion_preserves_the_source_frame_count() {
        let item = singing_item("sp0", (220.0, 240.0), 6);
        let reference = voice(140.0, 140.0, 1.5, 21);
        let ckpt = quick_ckpt();
        let opts = InferenceOptions {
            steps: 6,
            griffin_lim_iters: 3,
            ..InferenceOptions::default()
        };
        let frames = cfg().num_frames(item.audio.len());

        let (_, rb) =
            convert_svc_b(&item.audio, &item.lyrics, pop(), &reference, &ckpt, &cfg(), &opts)
                .unwrap();
        assert_eq!(rb.frames, frames);
        assert_eq!(rb.shift_semitones, 0);

        let (_, rc) =
            convert_svc_c(&item.audio, None, &reference, &ckpt, &cfg(), &opts).unwrap();
        assert_eq!(rc.frames, frames);

        // octave matching a ~230 Hz source onto a ~115 Hz reference shifts down
        let low_ref = voice(115.0, 115.0, 1.5, 22);
        let (_, rm) = convert_svc_c(
            &item.audio,
            None,
            &low_ref,
            &ckpt,
            &cfg(),
            &InferenceOptions { octave_match: true, ..opts },
        )
        .unwrap();
        assert_eq!(rm.shift_semitones, -12);
    }

    #[test]
    fn variant_and_mix_parse_round_trip() {
        for v in [ModelVariant::Svs, ModelVariant::SvcB, ModelVariant::SvcC] {
            assert_eq!(v.to_string().parse::<ModelVariant>().unwrap(), v);
        }
        assert!("svc-x".parse::<ModelVariant>().is_err());
        assert_eq!("on".parse::<MixMode>().unwrap(), MixMode::On);
        assert!("maybe".parse::<MixMode>().is_err());
    }
}
