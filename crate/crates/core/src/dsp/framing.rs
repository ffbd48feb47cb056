use std::f64::consts::PI;

use crate::audio::{ms_to_samples, AudioClip};
use crate::error::{Error, Result};

pub const FRAME_MS: f64 = 25.0;
pub const HOP_MS: f64 = 10.0;

/// Windowed analysis frames, row-major `n_frames × frame_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub data: Vec<f64>,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Frames {
    pub fn n_frames(&self) -> usize {
        if self.frame_len == 0 {
            0
        } else {
            self.data.len() / self.frame_len
        }
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.frame_len..(i + 1) * self.frame_len]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.frame_len)
    }
}

/// `floor((n − frame) / hop) + 1`, or zero when the signal is shorter than a frame.
pub fn frame_count(n_samples: usize, frame_len: usize, hop: usize) -> usize {
    if n_samples < frame_len || frame_len == 0 || hop == 0 {
        0
    } else {
        (n_samples - frame_len) / hop + 1
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

pub fn frame_signal(clip: &AudioClip, frame_ms: f64, hop_ms: f64) -> Result<Frames> {
    let sr = clip.sample_rate();
    let frame_len = ms_to_samples(frame_ms, sr);
    let hop = ms_to_samples(hop_ms, sr);
    if frame_len == 0 || hop == 0 {
        return Err(Error::config("frame and hop must span at least one sample"));
    }
    let n = frame_count(clip.len(), frame_len, hop);
    if n == 0 {
        return Err(Error::TooShort {
            needed: frame_len,
            got: clip.len(),
            unit: "samples",
        });
    }
    let window = hann(frame_len);
    let x = clip.samples();
    let mut data = Vec::with_capacity(n * frame_len);
    for i in 0..n {
        let start = i * hop;
        data.extend(x[start..start + frame_len].iter().zip(&window).map(|(s, w)| s * w));
    }
    Ok(Frames {
        data,
        frame_len,
        hop,
        sample_rate: sr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn silent(n: usize) -> AudioClip {
        AudioClip::new(vec![0.0; n], 16_000).unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        assert_eq!(frame_signal(&silent(16_000), 25.0, 10.0).unwrap().n_frames(), 98);
    }

    #[test]
    fn half_second_gives_48_frames() {
        assert_eq!(frame_signal(&silent(8000), 25.0, 10.0).unwrap().n_frames(), 48);
    }

    #[test]
    fn exactly_one_frame() {
        let f = frame_signal(&silent(400), 25.0, 10.0).unwrap();
        assert_eq!(f.n_frames(), 1);
        assert_eq!(f.frame_len, 400);
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(matches!(
            frame_signal(&silent(399), 25.0, 10.0),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn frames_are_windowed() {
        let clip = AudioClip::new(vec![1.0; 560], 16_000).unwrap();
        let f = frame_signal(&clip, 25.0, 10.0).unwrap();
        let w = hann(400);
        assert_eq!(f.n_frames(), 2);
        assert_eq!(f.frame(1), &w[..]);
        assert_eq!(w[0], 0.0);
        assert!((w[200] - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn count_matches_closed_form(frame_len in 1usize..500, hop in 1usize..300, extra in 0usize..3000) {
            let n = frame_len + extra;
            let clip = AudioClip::new(vec![0.1; n], 1000).unwrap();
            // 1 ms per sample at 1 kHz
            let f = frame_signal(&clip, frame_len as f64, hop as f64).unwrap();
            prop_assert_eq!(f.n_frames(), (n - frame_len) / hop + 1);
            prop_assert_eq!(f.n_frames(), frame_count(n, frame_len, hop));
        }
    }
}
