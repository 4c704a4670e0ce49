//! Symbolic music scores, lyrics, and style tags.
//!
//! Scores are monophonic note lists that tile the timeline: every moment
//! belongs to exactly one note, and silence is written as an explicit rest
//! (a note without a pitch). That makes the frame spans derived from a score
//! a partition, which the rest of the pipeline relies on.

use crate::dsp::SpectralConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIDI_MIN: u8 = 21;
pub const MIDI_MAX: u8 = 108;
pub const TEMPO_MIN: f64 = 30.0;
pub const TEMPO_MAX: f64 = 300.0;

/// Fixed phoneme inventory. Index into this list is the symbol id used by the
/// lyric encoder; `sil` marks silence/rests and `br` a breath.
pub const PHONEME_INVENTORY: [&str; 64] = [
    "sil", "br", "aa", "ae", "ah", "ao", "aw", "ax", "ay", "eh", "er", "ey", "ih", "iy", "ow",
    "oy", "uh", "uw", "a", "e", "i", "o", "u", "b", "ch", "d", "dh", "f", "g", "hh", "jh", "k",
    "l", "m", "n", "ng", "p", "r", "s", "sh", "t", "th", "v", "w", "y", "z", "zh", "ts", "dz",
    "ny", "ly", "rr", "ks", "kw", "gw", "tx", "dd", "bb", "gg", "pp", "kk", "tt", "mm", "nn",
];

pub const SILENCE_SYMBOL: &str = "sil";

pub fn phoneme_id(symbol: &str) -> Option<usize> {
    PHONEME_INVENTORY.iter().position(|&s| s == symbol)
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("parse: {0}")]
    Parse(String),
    #[error("unsupported score format version {0}")]
    Version(u32),
    #[error("tempo {0} outside [{TEMPO_MIN}, {TEMPO_MAX}] bpm")]
    TempoRange(f64),
    #[error("score has no pitched notes")]
    NoPitchedNotes,
    #[error("note {index}: midi pitch {midi} outside [{MIDI_MIN}, {MIDI_MAX}]")]
    PitchRange { index: usize, midi: i32 },
    #[error("note {index}: non-positive duration")]
    BadDuration { index: usize },
    #[error("overlapping notes at index {index}")]
    Overlap { index: usize },
    #[error("gap before note {index}: scores must tile time, write rests explicitly")]
    Gap { index: usize },
    #[error("notes are not in onset order at index {index}")]
    Unsorted { index: usize },
    #[error("transpose by {semitones} puts note {index} outside [{MIDI_MIN}, {MIDI_MAX}]")]
    TransposeRange { index: usize, semitones: i32 },
    #[error("unknown phoneme symbol {0:?}")]
    UnknownPhoneme(String),
    #[error("lyric phoneme {index} references note {note} which does not exist")]
    LyricNoteOutOfRange { index: usize, note: usize },
    #[error("lyric phoneme {index} references a rest note")]
    LyricOnRest { index: usize },
    #[error("pitched note {0} has no lyric phonemes")]
    NoteWithoutLyrics(usize),
    #[error("alignment spans must be ordered, non-overlapping and non-empty (span {0})")]
    BadAlignmentSpan(usize),
    #[error("frame {0} is not covered by any phoneme span")]
    UncoveredFrame(usize),
}

/// One score event. `midi: None` is a rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub midi: Option<u8>,
    pub onset_beats: f64,
    pub duration_beats: f64,
}

impl Note {
    pub fn is_rest(&self) -> bool {
        self.midi.is_none()
    }
}

pub fn note_hz(midi: u8) -> f64 {
    440.0 * 2f64.powf((midi as f64 - 69.0) / 12.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Genre {
    Pop,
    Opera,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    Normal,
    Vibrato,
}

/// Global rendering style requested for an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StyleToken {
    pub genre: Genre,
    pub technique: Technique,
}

impl StyleToken {
    pub const COUNT: usize = 4;

    /// Stable index into style embedding tables.
    pub fn index(self) -> usize {
        let g = match self.genre {
            Genre::Pop => 0,
            Genre::Opera => 1,
        };
        let t = match self.technique {
            Technique::Normal => 0,
            Technique::Vibrato => 1,
        };
        g * 2 + t
    }

    pub fn from_index(i: usize) -> Option<Self> {
        let genre = match i / 2 {
            0 => Genre::Pop,
            1 => Genre::Opera,
            _ => return None,
        };
        let technique = if i % 2 == 0 { Technique::Normal } else { Technique::Vibrato };
        Some(StyleToken { genre, technique })
    }

    /// Parse "genre:technique", e.g. "pop:vibrato".
    pub fn parse(s: &str) -> Result<Self, ScoreError> {
        let (g, t) = s
            .split_once(':')
            .ok_or_else(|| ScoreError::Parse(format!("style {s:?} is not genre:technique")))?;
        let genre = match g {
            "pop" => Genre::Pop,
            "opera" => Genre::Opera,
            _ => return Err(ScoreError::Parse(format!("unknown genre {g:?}"))),
        };
        let technique = match t {
            "normal" => Technique::Normal,
            "vibrato" => Technique::Vibrato,
            _ => return Err(ScoreError::Parse(format!("unknown technique {t:?}"))),
        };
        Ok(StyleToken { genre, technique })
    }
}

impl Default for StyleToken {
    fn default() -> Self {
        StyleToken { genre: Genre::Pop, technique: Technique::Normal }
    }
}

impl std::fmt::Display for StyleToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let g = match self.genre {
            Genre::Pop => "pop",
            Genre::Opera => "opera",
        };
        let t = match self.technique {
            Technique::Normal => "normal",
            Technique::Vibrato => "vibrato",
        };
        write!(f, "{g}:{t}")
    }
}

/// Validated monophonic score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicScore {
    pub notes: Vec<Note>,
    pub tempo_bpm: f64,
    #[serde(default = "default_language")]
    pub language: String,
}

fn default_language() -> String {
    "en".into()
}

impl MusicScore {
    pub fn new(notes: Vec<Note>, tempo_bpm: f64, language: &str) -> Result<Self, ScoreError> {
        let s = MusicScore { notes, tempo_bpm, language: language.into() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if !(TEMPO_MIN..=TEMPO_MAX).contains(&self.tempo_bpm) {
            return Err(ScoreError::TempoRange(self.tempo_bpm));
        }
        if !self.notes.iter().any(|n| !n.is_rest()) {
            return Err(ScoreError::NoPitchedNotes);
        }
        const EPS: f64 = 1e-6;
        let mut end = match self.notes.first() {
            Some(n) => n.onset_beats,
            None => return Err(ScoreError::NoPitchedNotes),
        };
        for (i, n) in self.notes.iter().enumerate() {
            if let Some(m) = n.midi {
                if !(MIDI_MIN..=MIDI_MAX).contains(&m) {
                    return Err(ScoreError::PitchRange { index: i, midi: m as i32 });
                }
            }
            if n.duration_beats <= 0.0 {
                return Err(ScoreError::BadDuration { index: i });
            }
            if i > 0 {
                if n.onset_beats + EPS < self.notes[i - 1].onset_beats {
                    return Err(ScoreError::Unsorted { index: i });
                }
                if n.onset_beats < end - EPS {
                    return Err(ScoreError::Overlap { index: i });
                }
                if n.onset_beats > end + EPS {
                    return Err(ScoreError::Gap { index: i });
                }
            }
            end = n.onset_beats + n.duration_beats;
        }
        Ok(())
    }

    pub fn total_beats(&self) -> f64 {
        self.notes.last().map(|n| n.onset_beats + n.duration_beats).unwrap_or(0.0)
    }

    pub fn total_secs(&self) -> f64 {
        self.total_beats() * 60.0 / self.tempo_bpm
    }

    pub fn beats_to_secs(&self, beats: f64) -> f64 {
        beats * 60.0 / self.tempo_bpm
    }

    /// Median pitch (Hz) over the pitched notes, each note counted once.
    pub fn median_note_hz(&self) -> Result<f64, ScoreError> {
        let mut v: Vec<f64> =
            self.notes.iter().filter_map(|n| n.midi).map(note_hz).collect();
        if v.is_empty() {
            return Err(ScoreError::NoPitchedNotes);
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }
}

/// Shift every pitched note by `semitones`. Fails (rather than clamps) if any
/// note would leave the MIDI range.
pub fn transpose(score: &MusicScore, semitones: i32) -> Result<MusicScore, ScoreError> {
    let mut out = score.clone();
    for (i, n) in out.notes.iter_mut().enumerate() {
        if let Some(m) = n.midi {
            let shifted = m as i32 + semitones;
            if !(MIDI_MIN as i32..=MIDI_MAX as i32).contains(&shifted) {
                return Err(ScoreError::TransposeRange { index: i, semitones });
            }
            n.midi = Some(shifted as u8);
        }
    }
    Ok(out)
}

/// Nominal frame span `[start, end)` of every note at the shared frame rate.
/// Spans partition `0..total_frames(score)`; sub-frame notes may be empty.
pub fn score_to_frames(score: &MusicScore, cfg: &SpectralConfig) -> Vec<(usize, usize)> {
    let period = cfg.frame_period_secs();
    let to_frame = |beats: f64| -> usize {
        let secs = score.beats_to_secs(beats);
        (secs / period).round() as usize
    };
    score
        .notes
        .iter()
        .map(|n| (to_frame(n.onset_beats), to_frame(n.onset_beats + n.duration_beats)))
        .collect()
}

/// One lyric phoneme attached to a pitched note (several phonemes may share a
/// note; they split its span at render time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyricPhoneme {
    pub symbol: String,
    pub note_index: usize,
}

/// On-disk score document: score plus optional lyrics and style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub format: u32,
    #[serde(flatten)]
    pub score: MusicScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyrics: Option<Vec<LyricPhoneme>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<StyleToken>,
}

pub const SCORE_FORMAT_VERSION: u32 = 1;

impl ScoreFile {
    pub fn new(
        score: MusicScore,
        lyrics: Option<Vec<LyricPhoneme>>,
        style: Option<StyleToken>,
    ) -> Result<Self, ScoreError> {
        let f = ScoreFile { format: SCORE_FORMAT_VERSION, score, lyrics, style };
        f.validate()?;
        Ok(f)
    }

    pub fn parse(text: &str) -> Result<Self, ScoreError> {
        let f: ScoreFile =
            serde_json::from_str(text).map_err(|e| ScoreError::Parse(e.to_string()))?;
        f.validate()?;
        Ok(f)
    }

    pub fn serialize(&self) -> String {
        serde_json::to_string_pretty(self).expect("score serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.format != SCORE_FORMAT_VERSION {
            return Err(ScoreError::Version(self.format));
        }
        self.score.validate()?;
        if let Some(lyrics) = &self.lyrics {
            let mut covered = vec![false; self.score.notes.len()];
            for (i, p) in lyrics.iter().enumerate() {
                if phoneme_id(&p.symbol).is_none() {
                    return Err(ScoreError::UnknownPhoneme(p.symbol.clone()));
                }
                let note = self
                    .score
                    .notes
                    .get(p.note_index)
                    .ok_or(ScoreError::LyricNoteOutOfRange { index: i, note: p.note_index })?;
                if note.is_rest() {
                    return Err(ScoreError::LyricOnRest { index: i });
                }
                covered[p.note_index] = true;
            }
            for (i, n) in self.score.notes.iter().enumerate() {
                if !n.is_rest() && !covered[i] {
                    return Err(ScoreError::NoteWithoutLyrics(i));
                }
            }
        }
        Ok(())
    }
}

/// Parse just the score out of a score document.
pub fn parse_score(text: &str) -> Result<MusicScore, ScoreError> {
    Ok(ScoreFile::parse(text)?.score)
}

/// A phoneme pinned to a concrete frame span `[start_frame, end_frame)`.
/// `note_index` is `None` for material without a score (speech).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPhoneme {
    pub symbol: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note_index: Option<usize>,
    pub start_frame: usize,
    pub end_frame: usize,
}

/// Frame-level phonetic alignment for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedLyrics {
    pub format: u32,
    pub phonemes: Vec<AlignedPhoneme>,
}

impl AlignedLyrics {
    pub fn new(phonemes: Vec<AlignedPhoneme>) -> Result<Self, ScoreError> {
        let a = AlignedLyrics { format: SCORE_FORMAT_VERSION, phonemes };
        a.validate()?;
        Ok(a)
    }

    pub fn parse(text: &str) -> Result<Self, ScoreError> {
        let a: AlignedLyrics =
            serde_json::from_str(text).map_err(|e| ScoreError::Parse(e.to_string()))?;
        a.validate()?;
        Ok(a)
    }

    pub fn serialize(&self) -> String {
        serde_json::to_string_pretty(self).expect("alignment serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.format != SCORE_FORMAT_VERSION {
            return Err(ScoreError::Version(self.format));
        }
        let mut prev_end = 0usize;
        for (i, p) in self.phonemes.iter().enumerate() {
            if phoneme_id(&p.symbol).is_none() {
                return Err(ScoreError::UnknownPhoneme(p.symbol.clone()));
            }
            if p.start_frame >= p.end_frame || p.start_frame < prev_end {
                return Err(ScoreError::BadAlignmentSpan(i));
            }
            prev_end = p.end_frame;
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.phonemes.last().map(|p| p.end_frame).unwrap_or(0)
    }

    /// Per-frame `(symbol_id, within-phoneme position)` for frames
    /// `0..total`. Position runs 0 at the first frame of a span to 1 at its
    /// last frame. Fails if any frame is uncovered.
    pub fn frame_symbols(&self, total: usize) -> Result<Vec<(usize, f32)>, ScoreError> {
        let mut out = Vec::with_capacity(total);
        let mut cursor = 0usize;
        for t in 0..total {
            while cursor < self.phonemes.len() && self.phonemes[cursor].end_frame <= t {
                cursor += 1;
            }
            let p = self.phonemes.get(cursor).ok_or(ScoreError::UncoveredFrame(t))?;
            if t < p.start_frame {
                return Err(ScoreError::UncoveredFrame(t));
            }
            let id = phoneme_id(&p.symbol).expect("validated symbol");
            let span = p.end_frame - p.start_frame;
            let pos =
                if span <= 1 { 0.0 } else { (t - p.start_frame) as f32 / (span - 1) as f32 };
            out.push((id, pos));
        }
        Ok(out)
    }
}
