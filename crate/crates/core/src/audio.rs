//! Audio buffers and strict PCM WAV I/O.
//!
//! The pipeline works at a single sample rate; WAV files are 16-bit mono PCM
//! and anything else is rejected rather than silently resampled.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use thiserror::Error;

pub const PIPELINE_SAMPLE_RATE: u32 = 22050;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a RIFF/WAVE file")]
    NotWave,
    #[error("unsupported wav encoding: expected 16-bit mono PCM at {expected} Hz, got {got}")]
    UnsupportedFormat { expected: u32, got: String },
    #[error("wav file has no data chunk")]
    NoData,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample out of range at index {index}: {value}")]
    OutOfRange { index: usize, value: f32 },
    #[error("empty audio buffer")]
    Empty,
}

/// Mono audio at a fixed sample rate. Samples are finite and within [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::Empty);
        }
        for (i, &s) in samples.iter().enumerate() {
            if !s.is_finite() {
                return Err(AudioError::NonFinite(i));
            }
            if s.abs() > 1.0 + 1e-6 {
                return Err(AudioError::OutOfRange { index: i, value: s });
            }
        }
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Ok(AudioBuffer { samples, sample_rate_hz })
    }

    #[inline]
    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    #[inline]
    pub fn sample_rate(&self) -> u32 {
        self.sample_rate_hz
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Read a 16-bit mono PCM WAV at the pipeline rate.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut riff = [0u8; 4];
    r.read_exact(&mut riff)?;
    if &riff != b"RIFF" {
        return Err(AudioError::NotWave);
    }
    let _riff_size = r.read_u32::<LittleEndian>()?;
    let mut wave = [0u8; 4];
    r.read_exact(&mut wave)?;
    if &wave != b"WAVE" {
        return Err(AudioError::NotWave);
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (tag, channels, rate, bits)
    let mut data: Option<Vec<i16>> = None;
    loop {
        let mut id = [0u8; 4];
        match r.read_exact(&mut id) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let size = r.read_u32::<LittleEndian>()?;
        match &id {
            b"fmt " => {
                let tag = r.read_u16::<LittleEndian>()?;
                let channels = r.read_u16::<LittleEndian>()?;
                let rate = r.read_u32::<LittleEndian>()?;
                let _byte_rate = r.read_u32::<LittleEndian>()?;
                let _block_align = r.read_u16::<LittleEndian>()?;
                let bits = r.read_u16::<LittleEndian>()?;
                let consumed = 16u32;
                if size > consumed {
                    r.seek(SeekFrom::Current((size - consumed) as i64))?;
                }
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let n = (size / 2) as usize;
                let mut buf = vec![0i16; n];
                r.read_i16_into::<LittleEndian>(&mut buf)?;
                if size % 2 == 1 {
                    r.seek(SeekFrom::Current(1))?;
                }
                data = Some(buf);
            }
            _ => {
                // chunks are word-aligned
                let skip = size + (size & 1);
                r.seek(SeekFrom::Current(skip as i64))?;
            }
        }
        // stop early once both chunks are in hand
        if fmt.is_some() && data.is_some() {
            break;
        }
    }

    let (tag, channels, rate, bits) = fmt.ok_or(AudioError::NotWave)?;
    if tag != 1 || channels != 1 || bits != 16 || rate != PIPELINE_SAMPLE_RATE {
        return Err(AudioError::UnsupportedFormat {
            expected: PIPELINE_SAMPLE_RATE,
            got: format!("tag={tag} channels={channels} bits={bits} rate={rate}"),
        });
    }
    let pcm = data.ok_or(AudioError::NoData)?;
    if pcm.is_empty() {
        return Err(AudioError::Empty);
    }
    // inverse of the writer's scale; -32768 has no exact preimage and maps
    // onto the -1.0 boundary
    let samples = pcm.iter().map(|&s| (s as f32 / 32767.0).max(-1.0)).collect();
    AudioBuffer::new(samples, rate)
}

/// Write a 16-bit mono PCM WAV.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<(), AudioError> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = audio.samples.len() as u32;
    let data_bytes = n * 2;

    w.write_all(b"RIFF")?;
    w.write_u32::<LittleEndian>(36 + data_bytes)?;
    w.write_all(b"WAVE")?;

    w.write_all(b"fmt ")?;
    w.write_u32::<LittleEndian>(16)?;
    w.write_u16::<LittleEndian>(1)?; // PCM
    w.write_u16::<LittleEndian>(1)?; // mono
    w.write_u32::<LittleEndian>(audio.sample_rate_hz)?;
    w.write_u32::<LittleEndian>(audio.sample_rate_hz * 2)?;
    w.write_u16::<LittleEndian>(2)?;
    w.write_u16::<LittleEndian>(16)?;

    w.write_all(b"data")?;
    w.write_u32::<LittleEndian>(data_bytes)?;
    for &s in &audio.samples {
        let q = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_i16::<LittleEndian>(q)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(n: usize, amp: f32) -> Vec<f32> {
        (0..n)
            .map(|i| amp * (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 22050.0).sin())
            .collect()
    }

    #[test]
    fn wav_round_trip_is_lossless_after_first_quantization() {
        let dir = std::env::temp_dir().join("canta_wav_rt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.wav");

        let a = AudioBuffer::new(sine(2048, 0.7), PIPELINE_SAMPLE_RATE).unwrap();
        write_wav(&path, &a).unwrap();
        let b = read_wav(&path).unwrap();
        write_wav(&path, &b).unwrap();
        let c = read_wav(&path).unwrap();
        assert_eq!(b.samples(), c.samples(), "quantized data must be stable");
        assert_eq!(b.sample_rate(), PIPELINE_SAMPLE_RATE);

        // first pass is within one quantization step
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert!((x - y).abs() <= 1.0 / 32767.0 + 1e-6);
        }
    }

    #[test]
    fn rejects_non_pipeline_rate() {
        let dir = std::env::temp_dir().join("canta_wav_rate");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad_rate.wav");
        let a = AudioBuffer { samples: sine(64, 0.5), sample_rate_hz: 44100 };
        write_wav(&path, &a).unwrap();
        match read_wav(&path) {
            Err(AudioError::UnsupportedFormat { .. }) => {}
            other => panic!("expected format rejection, got {other:?}"),
        }
    }

    #[test]
    fn rejects_stereo() {
        let dir = std::env::temp_dir().join("canta_wav_stereo");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("stereo.wav");
        // hand-build a stereo header
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 8).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes()); // stereo
        bytes.extend_from_slice(&22050u32.to_le_bytes());
        bytes.extend_from_slice(&(22050u32 * 4).to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&8u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_wav(&path), Err(AudioError::UnsupportedFormat { .. })));
    }

    #[test]
    fn rejects_non_finite_samples() {
        let err = AudioBuffer::new(vec![0.0, f32::NAN], PIPELINE_SAMPLE_RATE).unwrap_err();
        assert!(matches!(err, AudioError::NonFinite(1)));
    }
}
