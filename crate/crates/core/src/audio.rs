//! Mono PCM clips, WAV decoding and sample-rate conversion.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Rate every feature pipeline runs at.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;

/// Mono audio as 64-bit samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::data(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn empty(sample_rate: u32) -> Self {
        Self {
            samples: Vec::new(),
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Number of samples spanning `ms` milliseconds at this clip's rate.
    pub fn ms_to_samples(&self, ms: f64) -> usize {
        ms_to_samples(ms, self.sample_rate)
    }

    /// Sub-clip `[start, end)` in samples, clamped to the clip.
    pub fn slice(&self, start: usize, end: usize) -> AudioClip {
        let end = end.min(self.samples.len());
        let start = start.min(end);
        AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn from_parts_unchecked(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }
}

pub fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round() as usize
}

/// Decodes a RIFF/WAVE file (PCM16 or IEEE float32), averaging channels to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let file = File::open(path.as_ref())?;
    let reader = WavReader::new(BufReader::new(file))?;
    decode(reader)
}

pub fn decode_wav_bytes(bytes: &[u8]) -> Result<AudioClip> {
    let reader = WavReader::new(std::io::Cursor::new(bytes))?;
    decode(reader)
}

fn decode<R: std::io::Read>(mut reader: WavReader<R>) -> Result<AudioClip> {
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Decode("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {fmt:?} samples (expected PCM16 or float32)"
            )))
        }
    };
    if interleaved.len() % channels != 0 {
        return Err(Error::Decode("truncated sample frame".into()));
    }
    let mono = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(mono, spec.sample_rate)
}

/// Writes a mono PCM16 file. Samples outside [-1, 1] are clipped.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        writer.write_sample(pcm16(s))?;
    }
    writer.finalize()?;
    Ok(())
}

fn pcm16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

const SINC_HALF_WIDTH: usize = 16;

/// Windowed-sinc (Hann) resampling. A no-op when the rates already match.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    if clip.sample_rate == target_rate || clip.is_empty() {
        return AudioClip::from_parts_unchecked(clip.samples.clone(), target_rate);
    }
    let src_rate = clip.sample_rate as f64;
    let ratio = target_rate as f64 / src_rate;
    // Low-pass at the lower Nyquist when downsampling.
    let cutoff = ratio.min(1.0);
    let half = SINC_HALF_WIDTH as f64 / cutoff;
    let out_len = ((clip.len() as f64) * ratio).floor() as usize;
    let x = &clip.samples;
    let samples = (0..out_len)
        .map(|n| {
            let centre = n as f64 / ratio;
            let lo = (centre - half).ceil().max(0.0) as usize;
            let hi = ((centre + half).floor() as usize).min(x.len() - 1);
            (lo..=hi)
                .map(|i| {
                    let d = i as f64 - centre;
                    let window = 0.5 + 0.5 * (PI * d / half).cos();
                    x[i] * cutoff * sinc(cutoff * d) * window
                })
                .sum()
        })
        .collect();
    AudioClip::from_parts_unchecked(samples, target_rate)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}
