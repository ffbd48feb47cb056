//! MFCC, log mel-filterbank and delta features.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::framing::{frame_signal, Frames, FRAME_MS, HOP_MS};
use super::mel::MelFilterBank;
use super::preprocess::Preprocess;
use crate::audio::{AudioClip, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};

pub const N_FFT: usize = 512;
pub const N_MFCC: usize = 20;
pub const N_MFCC_MELS: usize = 32;
pub const N_LOG_MFB: usize = 64;
pub const DELTA_HALF_WIDTH: usize = 2;
/// Mel energies are clamped here before the log.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Mfcc,
    LogMfb,
    MfccDeltas,
}

impl FeatureKind {
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Mfcc => 0,
            FeatureKind::LogMfb => 1,
            FeatureKind::MfccDeltas => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Mfcc),
            1 => Some(FeatureKind::LogMfb),
            2 => Some(FeatureKind::MfccDeltas),
            _ => None,
        }
    }
}

/// `frames × n_coeffs` feature grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    n_frames: usize,
    n_coeffs: usize,
    pub frame_len_ms: f64,
    pub hop_ms: f64,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(
        values: Vec<f64>,
        n_frames: usize,
        n_coeffs: usize,
        frame_len_ms: f64,
        hop_ms: f64,
        kind: FeatureKind,
    ) -> Result<Self> {
        if values.len() != n_frames * n_coeffs {
            return Err(Error::shape(format!(
                "{} values for {n_frames}×{n_coeffs} features",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite feature value"));
        }
        Ok(Self {
            values,
            n_frames,
            n_coeffs,
            frame_len_ms,
            hop_ms,
            kind,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_coeffs..(t + 1) * self.n_coeffs]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n_coeffs)
    }

    /// Frames `[start, end)`.
    pub fn slice_frames(&self, start: usize, end: usize) -> FeatureMatrix {
        let end = end.min(self.n_frames);
        let start = start.min(end);
        FeatureMatrix {
            values: self.values[start * self.n_coeffs..end * self.n_coeffs].to_vec(),
            n_frames: end - start,
            ..*self
        }
    }
}

/// Orthonormal DCT-II matrix, `n_out × n_in`.
fn dct_matrix(n_in: usize, n_out: usize) -> Vec<f64> {
    let mut m = Vec::with_capacity(n_in * n_out);
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        m.extend((0..n_in).map(|n| scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos()));
    }
    m
}

/// Power spectra, log mel energies and cepstra for a fixed filterbank.
pub struct SpectralAnalyzer {
    fbank: MelFilterBank,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralAnalyzer").field("fbank", &self.fbank).finish()
    }
}

impl SpectralAnalyzer {
    pub fn new(fbank: MelFilterBank) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(fbank.n_fft());
        Self { fbank, fft }
    }

    pub fn fbank(&self) -> &MelFilterBank {
        &self.fbank
    }

    /// `|X_k|²` for the one-sided spectrum of a zero-padded frame.
    pub fn power_spectrum(&self, frame: &[f64], buf: &mut Vec<Complex<f64>>, out: &mut [f64]) {
        let n_fft = self.fbank.n_fft();
        buf.clear();
        buf.extend(frame.iter().map(|&x| Complex::new(x, 0.0)));
        buf.resize(n_fft, Complex::new(0.0, 0.0));
        self.fft.process(buf);
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o = c.norm_sqr();
        }
    }

    fn log_mel_frames(&self, frames: &Frames) -> Result<Vec<f64>> {
        let n_fft = self.fbank.n_fft();
        if frames.frame_len > n_fft {
            return Err(Error::config(format!(
                "frame length {} exceeds n_fft {n_fft}",
                frames.frame_len
            )));
        }
        let n_mels = self.fbank.n_mels();
        let mut buf = Vec::with_capacity(n_fft);
        let mut power = vec![0.0; self.fbank.n_bins()];
        let mut out = vec![0.0; frames.n_frames() * n_mels];
        for (frame, row) in frames.iter().zip(out.chunks_exact_mut(n_mels)) {
            self.power_spectrum(frame, &mut buf, &mut power);
            self.fbank.apply(&power, row);
            row.iter_mut().for_each(|e| *e = e.max(LOG_FLOOR).ln());
        }
        Ok(out)
    }

    pub fn log_mfb(&self, frames: &Frames) -> Result<FeatureMatrix> {
        let values = self.log_mel_frames(frames)?;
        FeatureMatrix::new(
            values,
            frames.n_frames(),
            self.fbank.n_mels(),
            frames_ms(frames.frame_len, frames.sample_rate),
            frames_ms(frames.hop, frames.sample_rate),
            FeatureKind::LogMfb,
        )
    }

    pub fn mfcc(&self, frames: &Frames, n_coeffs: usize) -> Result<FeatureMatrix> {
        let n_mels = self.fbank.n_mels();
        if n_coeffs == 0 || n_coeffs > n_mels {
            return Err(Error::config(format!(
                "{n_coeffs} cepstral coefficients from {n_mels} mel bands"
            )));
        }
        let log_mel = self.log_mel_frames(frames)?;
        let dct = dct_matrix(n_mels, n_coeffs);
        let mut values = Vec::with_capacity(frames.n_frames() * n_coeffs);
        for row in log_mel.chunks_exact(n_mels) {
            values.extend(
                dct.chunks_exact(n_mels)
                    .map(|basis| basis.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()),
            );
        }
        FeatureMatrix::new(
            values,
            frames.n_frames(),
            n_coeffs,
            frames_ms(frames.frame_len, frames.sample_rate),
            frames_ms(frames.hop, frames.sample_rate),
            FeatureKind::Mfcc,
        )
    }
}

fn frames_ms(samples: usize, rate: u32) -> f64 {
    samples as f64 * 1000.0 / rate as f64
}

pub fn mfcc(frames: &Frames, fbank: &MelFilterBank, n_coeffs: usize) -> Result<FeatureMatrix> {
    SpectralAnalyzer::new(fbank.clone()).mfcc(frames, n_coeffs)
}

pub fn log_mfb(frames: &Frames, fbank: &MelFilterBank) -> Result<FeatureMatrix> {
    SpectralAnalyzer::new(fbank.clone()).log_mfb(frames)
}

fn delta_rows(values: &[f64], n_frames: usize, n_coeffs: usize, half_width: usize) -> Vec<f64> {
    let denom = 2.0 * (1..=half_width).map(|n| (n * n) as f64).sum::<f64>();
    let at = |t: isize, c: usize| {
        let t = t.clamp(0, n_frames as isize - 1) as usize;
        values[t * n_coeffs + c]
    };
    let mut out = vec![0.0; values.len()];
    for t in 0..n_frames {
        for c in 0..n_coeffs {
            let num: f64 = (1..=half_width)
                .map(|n| n as f64 * (at((t + n) as isize, c) - at(t as isize - n as isize, c)))
                .sum();
            out[t * n_coeffs + c] = num / denom;
        }
    }
    out
}

/// `[c, Δc, ΔΔc]` per frame using regression deltas with edge replication.
pub fn deltas(features: &FeatureMatrix, half_width: usize) -> Result<FeatureMatrix> {
    let (n, d) = (features.n_frames(), features.n_coeffs());
    if n == 0 {
        return Err(Error::TooShort {
            needed: 1,
            got: 0,
            unit: "frames",
        });
    }
    if half_width == 0 {
        return Err(Error::config("delta half width must be at least 1"));
    }
    let d1 = delta_rows(features.values(), n, d, half_width);
    let d2 = delta_rows(&d1, n, d, half_width);
    let mut values = Vec::with_capacity(n * d * 3);
    for t in 0..n {
        let r = t * d..(t + 1) * d;
        values.extend_from_slice(&features.values()[r.clone()]);
        values.extend_from_slice(&d1[r.clone()]);
        values.extend_from_slice(&d2[r]);
    }
    FeatureMatrix::new(values, n, 3 * d, features.frame_len_ms, features.hop_ms, FeatureKind::MfccDeltas)
}

/// The full front end: preprocessing, framing and one feature kind.
#[derive(Debug)]
pub struct FeatureExtractor {
    pub kind: FeatureKind,
    pub preprocess: Option<Preprocess>,
    analyzer: SpectralAnalyzer,
}

impl FeatureExtractor {
    pub fn new(kind: FeatureKind, preprocess: Option<Preprocess>) -> Result<Self> {
        let n_mels = match kind {
            FeatureKind::Mfcc | FeatureKind::MfccDeltas => N_MFCC_MELS,
            FeatureKind::LogMfb => N_LOG_MFB,
        };
        let fbank = MelFilterBank::new(N_FFT, n_mels, TARGET_SAMPLE_RATE)?;
        Ok(Self {
            kind,
            preprocess,
            analyzer: SpectralAnalyzer::new(fbank),
        })
    }

    /// 20 MFCCs from 32 bands on default-preprocessed audio.
    pub fn mfcc() -> Self {
        Self::new(FeatureKind::Mfcc, Some(Preprocess::default())).expect("valid default filterbank")
    }

    /// Coefficients per frame.
    pub fn dim(&self) -> usize {
        match self.kind {
            FeatureKind::Mfcc => N_MFCC,
            FeatureKind::LogMfb => N_LOG_MFB,
            FeatureKind::MfccDeltas => 3 * N_MFCC,
        }
    }

    /// Features of audio that is already preprocessed and at 16 kHz.
    pub fn features_of(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        let clip = crate::audio::resample(clip, TARGET_SAMPLE_RATE);
        let frames = frame_signal(&clip, FRAME_MS, HOP_MS)?;
        match self.kind {
            FeatureKind::Mfcc => self.analyzer.mfcc(&frames, N_MFCC),
            FeatureKind::LogMfb => self.analyzer.log_mfb(&frames),
            FeatureKind::MfccDeltas => deltas(&self.analyzer.mfcc(&frames, N_MFCC)?, DELTA_HALF_WIDTH),
        }
    }

    pub fn preprocess(&self, clip: &AudioClip) -> AudioClip {
        match &self.preprocess {
            Some(p) => p.apply(clip),
            None => crate::audio::resample(clip, TARGET_SAMPLE_RATE),
        }
    }

    /// Preprocessing followed by feature extraction.
    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        self.features_of(&self.preprocess(clip))
    }
}
