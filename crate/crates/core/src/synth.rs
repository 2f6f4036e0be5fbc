//! Deterministic synthetic speech stand-in: each speaker is a fixed set of
//! sinusoids, each sample adds random phase, amplitude jitter and noise.

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::recognition::{encode_wav_pcm16, PipelineConfig};

pub const DEFAULT_SEED: u64 = 0x5eed;
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub speakers: usize,
    pub samples: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub duration_ms: u32,
    /// Peak amplitude of the uniform noise added to every frame.
    pub noise: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { speakers: 4, samples: 10, seed: DEFAULT_SEED, sample_rate: 8000, duration_ms: 500, noise: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSample {
    pub subject: u64,
    pub index: usize,
    pub file_name: String,
    pub wav: Vec<u8>,
}

impl SynthSample {
    /// The first half of each speaker's samples is for training.
    pub fn is_training(&self, samples_per_speaker: usize) -> bool {
        self.index < samples_per_speaker.div_ceil(2)
    }
}

/// Partial frequencies of speaker `subject` (1-based).
fn voice(subject: u64) -> [f64; 3] {
    let base = 140.0 + 95.0 * subject as f64;
    [base, base * 2.3, base * 3.7]
}

pub fn generate(opts: &SynthOptions) -> Vec<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let frames = (opts.sample_rate as u64 * opts.duration_ms as u64 / 1000) as usize;
    let mut out = Vec::with_capacity(opts.speakers * opts.samples);
    for s in 0..opts.speakers {
        let subject = s as u64 + 1;
        let freqs = voice(subject);
        for index in 0..opts.samples {
            let gain = rng.random_range(0.6..0.9);
            let parts: Vec<(f64, f64, f64)> = freqs
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    let amp = rng.random_range(0.8..1.2) / (k as f64 + 1.0);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    (f * rng.random_range(0.99..1.01), amp, phase)
                })
                .collect();
            let norm: f64 = parts.iter().map(|p| p.1).sum();
            let pcm: Vec<i16> = (0..frames)
                .map(|n| {
                    let t = n as f64 / opts.sample_rate as f64;
                    let tone: f64 = parts.iter().map(|(f, a, ph)| a * (std::f64::consts::TAU * f * t + ph).sin()).sum();
                    let x = gain * tone / norm + rng.random_range(-opts.noise..=opts.noise);
                    (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
                })
                .collect();
            out.push(SynthSample {
                subject,
                index,
                file_name: format!("speaker{subject:02}-{index:03}.wav"),
                wav: encode_wav_pcm16(&pcm, opts.sample_rate),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Test,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Train => "train",
            Phase::Test => "test",
        })
    }
}

/// One manifest line: `train|test <path> <subject> <config>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub phase: Phase,
    pub path: PathBuf,
    pub subject: u64,
    pub config: PipelineConfig,
}

impl fmt::Display for ManifestEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.phase, self.path.display(), self.subject, self.config)
    }
}

impl FromStr for ManifestEntry {
    type Err = String;
    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [phase, path, subject, config] = fields.as_slice() else {
            return Err(format!("expected `train|test <path> <subject> <config>`, got `{line}`"));
        };
        let phase = match *phase {
            "train" => Phase::Train,
            "test" => Phase::Test,
            p => return Err(format!("unknown phase `{p}`")),
        };
        Ok(ManifestEntry {
            phase,
            path: PathBuf::from(path),
            subject: subject.parse().map_err(|_| format!("bad subject `{subject}`"))?,
            config: config.parse().map_err(|e| format!("{e}"))?,
        })
    }
}

/// Parses a manifest. Blank lines and `#` comments are skipped; relative
/// paths are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| {
            let mut e: ManifestEntry = l.parse().map_err(|e| format!("line {}: {e}", n + 1))?;
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            Ok(e)
        })
        .collect()
}

/// Writes the corpus WAV files and a manifest using `configs` into `dir`.
/// Returns the manifest path.
pub fn write_corpus(dir: &Path, opts: &SynthOptions, configs: &[PipelineConfig]) -> io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let samples = generate(opts);
    let mut manifest = String::new();
    for s in &samples {
        std::fs::write(dir.join(&s.file_name), &s.wav)?;
    }
    for config in configs {
        for phase in [Phase::Train, Phase::Test] {
            for s in &samples {
                if (phase == Phase::Train) == s.is_training(opts.samples) {
                    manifest.push_str(&format!("{phase} {} {} {config}\n", s.file_name, s.subject));
                }
            }
        }
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest)?;
    Ok(path)
}
