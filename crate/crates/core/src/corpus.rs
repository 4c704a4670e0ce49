//! Synthetic corpus generation and loading.
//!
//! Real singing/speech datasets are out of reach for a desk-scale build, so
//! training and evaluation run on rendered voices instead: a harmonic source
//! driven by performance curves (scores for singing, pitch-contoured
//! pseudo-speech otherwise), shaped by a per-speaker spectral tilt and a
//! formant-like resonance set. Speakers are separable in timbre by
//! construction, and generation is bit-deterministic given the spec seed —
//! both properties are checked, not assumed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{read_wav, write_wav, AudioBuffer, AudioError};
use crate::dsp::SpectralConfig;
use crate::embed::{timbre_embed, EmbedError, TIMBRE_MIN_SECS};
use crate::feature::{AmplitudeEnvelope, DomainMode, F0Curve};
use crate::perform::{
    generate_amplitude, generate_f0_curve, generate_timing, PerformError, StyleTable,
};
use crate::pipeline::{align_lyrics_to_timing, splitmix64, CorpusItem, PipelineError};
use crate::score::{
    note_hz, AlignedLyrics, AlignedPhoneme, LyricPhoneme, MusicScore, Note, ScoreError, ScoreFile,
    StyleToken, PHONEME_INVENTORY, SILENCE_SYMBOL,
};

/// A generated corpus is only usable if speakers separate in timbre space by
/// at least this margin (mean within-speaker minus mean between-speaker
/// cosine).
pub const MIN_TIMBRE_MARGIN: f32 = 0.05;

const MANIFEST_NAME: &str = "manifest.json";
const MANIFEST_FORMAT: u32 = 1;
/// Reference frequency for the spectral tilt (gain 1 at this frequency).
const TILT_PIVOT_HZ: f32 = 200.0;
const MAX_HARMONICS: usize = 96;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Perform(#[from] PerformError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("invalid corpus spec: {0}")]
    Spec(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(
        "speakers do not separate in timbre: within-speaker cosine {within:.3} \
         vs between-speaker {between:.3} (need a margin of {MIN_TIMBRE_MARGIN})"
    )]
    Separation { within: f32, between: f32 },
}

/// One formant-like spectral peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub hz: f32,
    pub gain_db: f32,
    pub bandwidth_hz: f32,
}

/// A synthetic voice: broadband harmonic source with a spectral tilt, a
/// resonance set, and a home register.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerVoice {
    pub name: String,
    pub tilt_db_per_oct: f32,
    pub resonances: Vec<Resonance>,
    /// Center of the singing register; speech sits a few semitones below.
    pub base_midi: u8,
}

impl SpeakerVoice {
    /// Spectral gain at `f`, combining tilt and resonances.
    fn gain_at(&self, f: f32) -> f32 {
        let tilt = (f / TILT_PIVOT_HZ).powf(self.tilt_db_per_oct / 6.0206);
        let mut g = tilt;
        for r in &self.resonances {
            let w = 1.0 / (1.0 + ((f - r.hz) / r.bandwidth_hz).powi(2));
            g *= 1.0 + (10f32.powf(r.gain_db / 20.0) - 1.0) * w;
        }
        g
    }
}

/// Everything the generator needs to expand into a corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub speakers: Vec<SpeakerVoice>,
    pub utterances_per_speaker: usize,
    /// Fraction of each speaker's utterances rendered as pseudo-speech,
    /// realized by even interleaving (not sampling), so counts are exact.
    pub speech_fraction: f64,
    /// Inclusive range of note counts for the random singing scores.
    pub score_notes: (usize, usize),
    pub seed: u64,
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.speakers.len() < 2 {
            return Err(CorpusError::Spec(format!(
                "need at least 2 speakers, got {}",
                self.speakers.len()
            )));
        }
        if self.utterances_per_speaker == 0 {
            return Err(CorpusError::Spec("utterances_per_speaker must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.speech_fraction) {
            return Err(CorpusError::Spec(format!(
                "speech_fraction must be in [0, 1], got {}",
                self.speech_fraction
            )));
        }
        let (lo, hi) = self.score_notes;
        if lo < 3 || hi < lo {
            return Err(CorpusError::Spec(format!(
                "score_notes range ({lo}, {hi}) must satisfy 3 <= lo <= hi"
            )));
        }
        for (i, s) in self.speakers.iter().enumerate() {
            if !(40..=84).contains(&s.base_midi) {
                return Err(CorpusError::Spec(format!(
                    "speaker {i} base_midi {} outside the supported 40..=84",
                    s.base_midi
                )));
            }
        }
        Ok(())
    }

    /// Ready-made spec with clearly distinct voices: tilts spread across
    /// several dB/octave, disjoint resonance placements, staggered registers.
    pub fn demo(
        n_speakers: usize,
        utterances_per_speaker: usize,
        speech_fraction: f64,
        seed: u64,
    ) -> Self {
        let speakers = (0..n_speakers)
            .map(|i| {
                let fi = i as f32;
                SpeakerVoice {
                    name: format!("spk{i:02}"),
                    tilt_db_per_oct: -9.0 + 4.0 * fi,
                    resonances: vec![
                        Resonance { hz: 450.0 + 160.0 * fi, gain_db: 7.0, bandwidth_hz: 130.0 },
                        Resonance { hz: 1350.0 + 240.0 * fi, gain_db: 6.0, bandwidth_hz: 190.0 },
                        Resonance { hz: 2600.0 + 340.0 * fi, gain_db: 5.0, bandwidth_hz: 260.0 },
                    ],
                    base_midi: 55 + ((5 * i) % 15) as u8,
                }
            })
            .collect();
        SyntheticCorpusSpec {
            speakers,
            utterances_per_speaker,
            speech_fraction,
            score_notes: (4, 8),
            seed,
        }
    }
}

/// One corpus item as recorded in the manifest; paths are relative to the
/// corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub path: String,
    pub domain: DomainMode,
    pub speaker: String,
    pub style: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_path: Option<String>,
    pub align_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: u32,
    pub seed: u64,
    pub entries: Vec<CorpusEntry>,
    /// Mean timbre cosine over same-speaker pairs.
    pub timbre_within_mean: f32,
    /// Mean timbre cosine over different-speaker pairs.
    pub timbre_between_mean: f32,
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

/// Additive harmonic rendering of (F0, amplitude) curves through a speaker's
/// spectral shape. Per-frame harmonic gains are RMS-normalized so the output
/// loudness tracks the amplitude envelope, then linearly interpolated at
/// sample rate. Output spans `(frames - 1) * hop` samples so every analysis
/// frame of the result is covered by the control curves.
fn render_voice(
    voice: &SpeakerVoice,
    f0: &F0Curve,
    amp: &AmplitudeEnvelope,
    cfg: &SpectralConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AudioBuffer, CorpusError> {
    let total = f0.len();
    if total < 2 || amp.values.len() != total {
        return Err(CorpusError::Spec(format!(
            "control curves too short or mismatched: f0 {total}, amp {}",
            amp.values.len()
        )));
    }
    let sr = cfg.sample_rate_hz as f32;
    let f_min = f0.voiced_values().fold(f32::INFINITY, f32::min);
    if !f_min.is_finite() {
        return Err(CorpusError::Spec("control curves have no voiced frames".into()));
    }
    let n_harm = ((0.45 * sr / f_min) as usize).clamp(1, MAX_HARMONICS);

    // per-frame, per-harmonic gains; zero where unvoiced
    let mut gains = vec![0.0f32; total * n_harm];
    let nyquist = 0.5 * sr;
    for t in 0..total {
        if !f0.voiced[t] {
            continue;
        }
        let f = f0.values_hz[t];
        let row = &mut gains[t * n_harm..(t + 1) * n_harm];
        let mut power = 0.0f32;
        for (h, g) in row.iter_mut().enumerate() {
            let fh = f * (h + 1) as f32;
            if fh < nyquist {
                *g = voice.gain_at(fh);
                power += *g * *g;
            }
        }
        if power > 0.0 {
            let norm = (power / 2.0).sqrt();
            for g in row.iter_mut() {
                *g /= norm;
            }
        }
    }

    let mut phases: Vec<f64> =
        (0..n_harm).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let hop = cfg.hop;
    let len = (total - 1) * hop;
    let mut out = vec![0.0f32; len];
    let two_pi = std::f64::consts::TAU;
    for (i, o) in out.iter_mut().enumerate() {
        let t0 = i / hop;
        let t1 = (t0 + 1).min(total - 1);
        let frac = (i - t0 * hop) as f32 / hop as f32;
        let a = amp.values[t0] + frac * (amp.values[t1] - amp.values[t0]);

        // hold the last voiced pitch through unvoiced stretches; the
        // amplitude envelope silences them anyway
        let f = match (f0.voiced[t0], f0.voiced[t1]) {
            (true, true) => {
                let l0 = f0.values_hz[t0].ln();
                let l1 = f0.values_hz[t1].ln();
                (l0 + frac * (l1 - l0)).exp()
            }
            (true, false) => f0.values_hz[t0],
            (false, true) => f0.values_hz[t1],
            (false, false) => f_min,
        };

        let g0 = &gains[t0 * n_harm..(t0 + 1) * n_harm];
        let g1 = &gains[t1 * n_harm..(t1 + 1) * n_harm];
        let mut s = 0.0f64;
        let step = two_pi * f as f64 / sr as f64;
        for h in 0..n_harm {
            phases[h] = (phases[h] + step * (h + 1) as f64) % two_pi;
            let g = g0[h] + frac * (g1[h] - g0[h]);
            if g != 0.0 {
                s += (g as f64) * phases[h].sin();
            }
        }
        *o = a * s as f32;
    }

    let peak = out.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    if peak > 0.98 {
        let scale = 0.98 / peak;
        for v in &mut out {
            *v *= scale;
        }
    }
    Ok(AudioBuffer::new(out, cfg.sample_rate_hz)?)
}

// ---------------------------------------------------------------------------
// material generation
// ---------------------------------------------------------------------------

fn random_phoneme(rng: &mut ChaCha8Rng) -> String {
    // anything but silence; index 0 is "sil"
    PHONEME_INVENTORY[rng.random_range(1..PHONEME_INVENTORY.len())].to_string()
}

fn random_score(
    voice: &SpeakerVoice,
    notes_range: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Result<(MusicScore, Vec<LyricPhoneme>, StyleToken), CorpusError> {
    let n_notes = rng.random_range(notes_range.0..=notes_range.1);
    let tempo = rng.random_range(96.0..132.0);
    let base = voice.base_midi as i32;
    // start each utterance in its own corner of a wide register so pitch
    // ranges overlap across speakers; otherwise register alone would
    // identify the voice and the pitch/timbre channels could not be told
    // apart downstream
    let mut midi = base + rng.random_range(-7..=7);
    let mut notes = Vec::with_capacity(n_notes);
    let mut onset = 0.0f64;
    for i in 0..n_notes {
        let dur = match rng.random_range(0..9) {
            0..=2 => 0.5,
            3..=4 => 0.75,
            5..=7 => 1.0,
            _ => 1.5,
        };
        let rest = i > 0 && i + 1 < n_notes && rng.random_bool(0.12);
        let pitch = if rest {
            None
        } else {
            midi = (midi + rng.random_range(-3..=3)).clamp(base - 10, base + 10);
            Some(midi as u8)
        };
        notes.push(Note { midi: pitch, onset_beats: onset, duration_beats: dur });
        onset += dur;
    }

    // timbre extraction needs material beyond a minimum length
    let total_secs = onset * 60.0 / tempo;
    let min_secs = TIMBRE_MIN_SECS + 0.7;
    if total_secs < min_secs {
        let factor = min_secs / total_secs;
        let mut at = 0.0;
        for n in &mut notes {
            n.onset_beats = at;
            n.duration_beats *= factor;
            at += n.duration_beats;
        }
    }
    let score = MusicScore::new(notes, tempo, "en")?;

    let mut lyrics = Vec::new();
    for (i, n) in score.notes.iter().enumerate() {
        if n.is_rest() {
            continue;
        }
        for _ in 0..rng.random_range(1..=2) {
            lyrics.push(LyricPhoneme { symbol: random_phoneme(rng), note_index: i });
        }
    }
    let style = StyleToken::from_index(rng.random_range(0..StyleToken::COUNT))
        .expect("index in range");
    Ok((score, lyrics, style))
}

/// Pitch-contoured pseudo-speech: syllable-like voiced runs on a slowly
/// wandering, slowly declining pitch, separated by short silent gaps.
fn speech_curves(
    voice: &SpeakerVoice,
    cfg: &SpectralConfig,
    rng: &mut ChaCha8Rng,
) -> (F0Curve, AmplitudeEnvelope, AlignedLyrics) {
    let total = rng.random_range(150..210);
    let base_log2 = (note_hz(voice.base_midi) * 0.75).log2();
    let mut values = vec![0.0f32; total];
    let mut voiced = vec![false; total];
    let mut amp = vec![0.0f32; total];
    let mut phonemes: Vec<AlignedPhoneme> = Vec::new();

    let mut wander = 0.0f64;
    let mut cursor = 0usize;
    while cursor + 4 < total {
        let run = rng.random_range(10..24).min(total - cursor);
        let sustain = rng.random_range(0.45..0.65) as f32;
        for j in 0..run {
            let t = cursor + j;
            wander = 0.96 * wander + rng.random_range(-0.035..0.035);
            wander = wander.clamp(-0.25, 0.25);
            let decline = -0.12 * t as f64 / total as f64;
            values[t] = (base_log2 + wander + decline).exp2() as f32;
            voiced[t] = true;
            let edge = 3.0f32;
            let rise = ((j as f32 + 0.5) / edge).min(1.0);
            let fall = (((run - 1 - j) as f32 + 0.5) / edge).min(1.0);
            amp[t] = sustain * rise.min(fall);
        }
        let n_ph = rng.random_range(1..=3).min(run);
        for p in 0..n_ph {
            let a = cursor + p * run / n_ph;
            let b = cursor + (p + 1) * run / n_ph;
            if a < b {
                phonemes.push(AlignedPhoneme {
                    symbol: random_phoneme(rng),
                    note_index: None,
                    start_frame: a,
                    end_frame: b,
                });
            }
        }
        cursor += run;
        let gap = rng.random_range(3..9).min(total - cursor);
        if gap > 0 {
            phonemes.push(AlignedPhoneme {
                symbol: SILENCE_SYMBOL.into(),
                note_index: None,
                start_frame: cursor,
                end_frame: cursor + gap,
            });
            cursor += gap;
        }
    }
    if cursor < total {
        phonemes.push(AlignedPhoneme {
            symbol: SILENCE_SYMBOL.into(),
            note_index: None,
            start_frame: cursor,
            end_frame: total,
        });
    }
    let lyrics = AlignedLyrics::new(phonemes).expect("constructed alignment is contiguous");
    (
        F0Curve { values_hz: values, voiced, hop: cfg.hop },
        AmplitudeEnvelope { values: amp, hop: cfg.hop },
        lyrics,
    )
}

struct RenderedUtterance {
    audio: AudioBuffer,
    lyrics: AlignedLyrics,
    score_file: Option<ScoreFile>,
    style: StyleToken,
}

fn gen_singing(
    voice: &SpeakerVoice,
    notes_range: (usize, usize),
    cfg: &SpectralConfig,
    styles: &StyleTable,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<RenderedUtterance, CorpusError> {
    let (score, lyric_phonemes, style) = random_score(voice, notes_range, rng)?;
    let timing = generate_timing(&score, cfg, seed);
    let profile = styles.profile(style);
    let f0 = generate_f0_curve(&score, &timing, profile, cfg, seed)?;
    let amp = generate_amplitude(&score, &timing, profile, cfg, seed)?;
    let lyrics = align_lyrics_to_timing(&lyric_phonemes, &score, &timing)?;
    let audio = render_voice(voice, &f0, &amp, cfg, rng)?;
    let score_file = ScoreFile::new(score, Some(lyric_phonemes), Some(style))?;
    Ok(RenderedUtterance { audio, lyrics, score_file: Some(score_file), style })
}

fn gen_speech(
    voice: &SpeakerVoice,
    cfg: &SpectralConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RenderedUtterance, CorpusError> {
    let (f0, amp, lyrics) = speech_curves(voice, cfg, rng);
    let audio = render_voice(voice, &f0, &amp, cfg, rng)?;
    Ok(RenderedUtterance { audio, lyrics, score_file: None, style: StyleToken::default() })
}

// ---------------------------------------------------------------------------
// generation and loading
// ---------------------------------------------------------------------------

/// Even interleaving of speech among a speaker's utterances: exact counts,
/// no sampling noise.
fn is_speech_slot(u: usize, fraction: f64) -> bool {
    let before = (u as f64 * fraction + 1e-9).floor();
    let after = ((u + 1) as f64 * fraction + 1e-9).floor();
    after > before
}

/// Expand a spec into a corpus directory: WAV + alignment (+ score for
/// singing) per utterance, plus a manifest. Fails if the rendered speakers
/// do not separate in timbre space.
pub fn gen_corpus(
    spec: &SyntheticCorpusSpec,
    dir: impl AsRef<Path>,
) -> Result<CorpusManifest, CorpusError> {
    let dir = dir.as_ref();
    spec.validate()?;
    std::fs::create_dir_all(dir)?;
    let cfg = SpectralConfig::default();
    let styles = StyleTable::default();

    let mut entries = Vec::new();
    let mut embeddings = Vec::new();
    for (s, voice) in spec.speakers.iter().enumerate() {
        for u in 0..spec.utterances_per_speaker {
            let useed = splitmix64(spec.seed ^ splitmix64(((s as u64) << 32) | u as u64));
            let mut rng = ChaCha8Rng::seed_from_u64(useed);
            let speech = is_speech_slot(u, spec.speech_fraction);
            let rendered = if speech {
                gen_speech(voice, &cfg, &mut rng)?
            } else {
                gen_singing(voice, spec.score_notes, &cfg, &styles, useed, &mut rng)?
            };

            let stem = format!("utt-{s:02}-{u:03}");
            let wav_name = format!("{stem}.wav");
            let align_name = format!("{stem}.align.json");
            write_wav(dir.join(&wav_name), &rendered.audio)?;
            std::fs::write(dir.join(&align_name), rendered.lyrics.serialize())?;
            let score_path = match &rendered.score_file {
                Some(f) => {
                    let name = format!("{stem}.score.json");
                    std::fs::write(dir.join(&name), f.serialize())?;
                    Some(name)
                }
                None => None,
            };

            // gate on what a consumer will actually read back
            let audio = read_wav(dir.join(&wav_name))?;
            embeddings.push((s, timbre_embed(&audio, &cfg)?));

            entries.push(CorpusEntry {
                path: wav_name,
                domain: if speech { DomainMode::Speech } else { DomainMode::Singing },
                speaker: voice.name.clone(),
                style: rendered.style.to_string(),
                score_path,
                align_path: align_name,
            });
        }
    }

    let (within, between) = separation(&embeddings);
    if spec.utterances_per_speaker > 1 && within - between < MIN_TIMBRE_MARGIN {
        return Err(CorpusError::Separation { within, between });
    }
    let manifest = CorpusManifest {
        format: MANIFEST_FORMAT,
        seed: spec.seed,
        entries,
        timbre_within_mean: within,
        timbre_between_mean: between,
    };
    std::fs::write(
        dir.join(MANIFEST_NAME),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}

fn separation(embeddings: &[(usize, crate::embed::TimbreEmbedding)]) -> (f32, f32) {
    let mut within = (0.0f64, 0usize);
    let mut between = (0.0f64, 0usize);
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            let cos = embeddings[i].1.cosine(&embeddings[j].1) as f64;
            if embeddings[i].0 == embeddings[j].0 {
                within.0 += cos;
                within.1 += 1;
            } else {
                between.0 += cos;
                between.1 += 1;
            }
        }
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { (s / n as f64) as f32 };
    (mean(within), mean(between))
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<CorpusManifest, CorpusError> {
    let text = std::fs::read_to_string(dir.as_ref().join(MANIFEST_NAME))?;
    let manifest: CorpusManifest =
        serde_json::from_str(&text).map_err(|e| CorpusError::Manifest(e.to_string()))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(CorpusError::Manifest(format!(
            "unsupported manifest format {}",
            manifest.format
        )));
    }
    Ok(manifest)
}

/// Read a generated corpus back into memory, ready for training.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<CorpusItem>, CorpusError> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let mut items = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let audio = read_wav(dir.join(&e.path))?;
        let lyrics = AlignedLyrics::parse(&std::fs::read_to_string(dir.join(&e.align_path))?)?;
        let score = match &e.score_path {
            Some(p) => Some(ScoreFile::parse(&std::fs::read_to_string(dir.join(p))?)?.score),
            None => None,
        };
        let item = CorpusItem {
            audio,
            domain: e.domain,
            lyrics,
            score,
            speaker: e.speaker.clone(),
            style: StyleToken::parse(&e.style)?,
        };
        item.validate()?;
        items.push(item);
    }
    Ok(items)
}
