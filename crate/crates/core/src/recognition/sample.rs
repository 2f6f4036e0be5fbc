use std::fmt;
use std::str::FromStr;

use super::RecognitionError;
use crate::storage::{Canonical, CanonicalValue, StorageError};

/// Rate assigned to headerless float input.
pub const RAW_F64_SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceFormat {
    /// RIFF/WAVE, PCM, 16-bit, mono, little-endian.
    WavPcm16,
    /// Headerless little-endian f64 amplitudes.
    RawF64,
}

impl SourceFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceFormat::WavPcm16 => "WAV_PCM16",
            SourceFormat::RawF64 => "RAW_F64",
        }
    }
}

impl fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceFormat {
    type Err = RecognitionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "WAV_PCM16" | "wav" | "WAV" => Ok(SourceFormat::WavPcm16),
            "RAW_F64" | "raw" | "RAW" => Ok(SourceFormat::RawF64),
            other => Err(RecognitionError::UnsupportedFormat(other.to_owned())),
        }
    }
}

/// A decoded mono signal with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_format: SourceFormat,
}

impl Sample {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_format: SourceFormat) -> Result<Self, RecognitionError> {
        if samples.is_empty() {
            return Err(RecognitionError::EmptySample);
        }
        if sample_rate == 0 {
            return Err(RecognitionError::Format("sample rate must be positive".into()));
        }
        if let Some(bad) = samples.iter().find(|a| !a.is_finite() || a.abs() > 1.0) {
            return Err(RecognitionError::Format(format!("amplitude {bad} outside [-1, 1]")));
        }
        Ok(Sample { samples, sample_rate, source_format })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn load_sample(bytes: &[u8], format: SourceFormat) -> Result<Sample, RecognitionError> {
    if bytes.is_empty() {
        return Err(RecognitionError::EmptySample);
    }
    match format {
        SourceFormat::WavPcm16 => load_wav(bytes),
        SourceFormat::RawF64 => load_raw_f64(bytes),
    }
}

fn load_raw_f64(bytes: &[u8]) -> Result<Sample, RecognitionError> {
    if bytes.len() % 8 != 0 {
        return Err(RecognitionError::Format(format!("{} bytes is not a whole number of f64 values", bytes.len())));
    }
    let samples = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Sample::new(samples, RAW_F64_SAMPLE_RATE, SourceFormat::RawF64)
}

fn u16_le(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_le(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn load_wav(bytes: &[u8]) -> Result<Sample, RecognitionError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(RecognitionError::Format("missing RIFF/WAVE header".into()));
    }

    let mut pos = 12;
    let mut sample_rate = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_le(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| RecognitionError::Format(format!("chunk `{}` overruns file", String::from_utf8_lossy(id))))?;
        let body = &bytes[body_start..body_end];

        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(RecognitionError::Format("fmt chunk too short".into()));
                }
                let audio_format = u16_le(body, 0);
                let channels = u16_le(body, 2);
                let rate = u32_le(body, 4);
                let bits = u16_le(body, 14);
                if audio_format != 1 {
                    return Err(RecognitionError::UnsupportedFormat(format!("audio format {audio_format} (PCM only)")));
                }
                if channels != 1 {
                    return Err(RecognitionError::UnsupportedFormat(format!("{channels} channels (mono only)")));
                }
                if bits != 16 {
                    return Err(RecognitionError::UnsupportedFormat(format!("{bits}-bit samples (16-bit only)")));
                }
                if rate == 0 {
                    return Err(RecognitionError::Format("zero sample rate".into()));
                }
                sample_rate = Some(rate);
            }
            b"data" => {
                let rate = sample_rate.ok_or_else(|| RecognitionError::Format("data chunk before fmt chunk".into()))?;
                if body.len() % 2 != 0 {
                    return Err(RecognitionError::Format("odd byte count in 16-bit data chunk".into()));
                }
                if body.is_empty() {
                    return Err(RecognitionError::EmptySample);
                }
                let samples = body
                    .chunks_exact(2)
                    .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
                    .collect();
                return Sample::new(samples, rate, SourceFormat::WavPcm16);
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = body_end + (size & 1);
    }
    Err(RecognitionError::Format("no data chunk".into()))
}

/// Encodes 16-bit PCM frames as a canonical 44-byte-header mono WAV file.
pub fn encode_wav_pcm16(frames: &[i16], sample_rate: u32) -> Vec<u8> {
    let data_len = (frames.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for f in frames {
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

impl Canonical for Sample {
    fn to_canonical(&self) -> CanonicalValue {
        CanonicalValue::map()
            .with("samples", self.samples.clone())
            .with("sample_rate", i64::from(self.sample_rate))
            .with("source_format", self.source_format.as_str())
            .build()
    }

    fn from_canonical(v: &CanonicalValue) -> Result<Self, StorageError> {
        let rate = v.field("sample_rate")?.as_u64()?;
        let format: SourceFormat =
            v.field("source_format")?.as_str()?.parse().map_err(|e: RecognitionError| StorageError::Schema(e.to_string()))?;
        Sample::new(
            v.field("samples")?.as_f64_array()?.to_vec(),
            u32::try_from(rate).map_err(|_| StorageError::Schema(format!("sample rate {rate} out of range")))?,
            format,
        )
        .map_err(|e| StorageError::Schema(e.to_string()))
    }
}
