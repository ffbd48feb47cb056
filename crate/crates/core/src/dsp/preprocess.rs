//! Silence trimming and block-wise loudness equalization.

use crate::audio::{resample, AudioClip, TARGET_SAMPLE_RATE};

pub const DEFAULT_SILENCE_FRAME_MS: f64 = 25.0;
pub const DEFAULT_SILENCE_THRESHOLD_DB: f64 = -40.0;
pub const DEFAULT_LOUDNESS_WINDOW_MS: f64 = 250.0;
pub const DEFAULT_TARGET_RMS: f64 = 0.1;
/// Blocks quieter than this are left untouched.
pub const LOUDNESS_FLOOR_RMS: f64 = 1e-6;

fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Per-frame keep mask for power thresholding relative to the loudest frame.
fn loud_frames(clip: &AudioClip, frame_ms: f64, threshold_db: f64) -> (usize, Vec<bool>) {
    let frame = clip.ms_to_samples(frame_ms).max(1);
    let powers: Vec<f64> = clip.samples().chunks(frame).map(mean_power).collect();
    let max = powers.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return (frame, vec![false; powers.len()]);
    }
    let threshold = max * 10f64.powf(threshold_db / 10.0);
    (frame, powers.iter().map(|&p| p >= threshold).collect())
}

/// Concatenates every `frame_ms` frame whose mean power is within `threshold_db`
/// of the loudest frame. The result may be empty.
pub fn remove_silence(clip: &AudioClip, frame_ms: f64, threshold_db: f64) -> AudioClip {
    let (frame, keep) = loud_frames(clip, frame_ms, threshold_db);
    let samples = clip
        .samples()
        .chunks(frame)
        .zip(&keep)
        .filter(|(_, &k)| k)
        .flat_map(|(c, _)| c.iter().copied())
        .collect();
    AudioClip::from_parts_unchecked(samples, clip.sample_rate())
}

/// Contiguous runs of quiet frames at least `min_len_ms` long: the portions
/// [`remove_silence`] would drop.
pub fn silence_portions(
    clip: &AudioClip,
    frame_ms: f64,
    threshold_db: f64,
    min_len_ms: f64,
) -> Vec<AudioClip> {
    let (frame, keep) = loud_frames(clip, frame_ms, threshold_db);
    let min_len = clip.ms_to_samples(min_len_ms).max(1);
    let mut out = Vec::new();
    let mut run_start = None;
    for (i, &loud) in keep.iter().chain(std::iter::once(&true)).enumerate() {
        match (loud, run_start) {
            (false, None) => run_start = Some(i),
            (true, Some(start)) => {
                let (a, b) = (start * frame, (i * frame).min(clip.len()));
                if b - a >= min_len {
                    out.push(clip.slice(a, b));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    out
}

/// Scales each consecutive `window_ms` block so its RMS equals `target_rms`.
pub fn equalize_loudness(clip: &AudioClip, window_ms: f64, target_rms: f64) -> AudioClip {
    let block = clip.ms_to_samples(window_ms).max(1);
    let mut samples = clip.samples().to_vec();
    for chunk in samples.chunks_mut(block) {
        let rms = mean_power(chunk).sqrt();
        if rms >= LOUDNESS_FLOOR_RMS {
            let gain = target_rms / rms;
            chunk.iter_mut().for_each(|s| *s *= gain);
        }
    }
    AudioClip::from_parts_unchecked(samples, clip.sample_rate())
}

/// Resampling, silence removal and loudness equalization with their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocess {
    pub silence_frame_ms: f64,
    pub silence_threshold_db: f64,
    pub loudness_window_ms: f64,
    pub target_rms: f64,
    pub remove_silence: bool,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            silence_frame_ms: DEFAULT_SILENCE_FRAME_MS,
            silence_threshold_db: DEFAULT_SILENCE_THRESHOLD_DB,
            loudness_window_ms: DEFAULT_LOUDNESS_WINDOW_MS,
            target_rms: DEFAULT_TARGET_RMS,
            remove_silence: true,
        }
    }
}

impl Preprocess {
    /// Length-preserving variant for segmentation, where frame positions must
    /// stay aligned with the ground truth.
    pub fn aligned() -> Self {
        Self {
            remove_silence: false,
            ..Self::default()
        }
    }

    pub fn apply(&self, clip: &AudioClip) -> AudioClip {
        let clip = resample(clip, TARGET_SAMPLE_RATE);
        let clip = if self.remove_silence {
            remove_silence(&clip, self.silence_frame_ms, self.silence_threshold_db)
        } else {
            clip
        };
        equalize_loudness(&clip, self.loudness_window_ms, self.target_rms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 16_000).unwrap()
    }

    fn sine(n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * 440.0 * i as f64 / 16_000.0).sin()).collect()
    }

    #[test]
    fn zeros_are_removed_entirely() {
        let out = remove_silence(&clip(vec![0.0; 8000]), 25.0, -40.0);
        assert!(out.is_empty());
    }

    #[test]
    fn uniform_power_is_untouched() {
        let x = clip(sine(16_000, 0.5));
        assert_eq!(remove_silence(&x, 25.0, -40.0), x);
    }

    #[test]
    fn tone_then_hiss_keeps_only_the_tone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut x = sine(16_000, 0.5);
        // -80 dB relative to the tone's power of 0.125
        let hiss_amp = (0.125f64 * 1e-8 * 3.0).sqrt();
        x.extend((0..16_000).map(|_| rng.random_range(-hiss_amp..hiss_amp)));
        let input = clip(x);

        // brute-force oracle: per-frame power, then thresholding
        let frame = 400;
        let powers: Vec<f64> = input
            .samples()
            .chunks(frame)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64)
            .collect();
        let max = powers.iter().cloned().fold(0.0, f64::max);
        let kept_frames = powers.iter().filter(|&&p| p >= max * 1e-4).count();
        assert_eq!(kept_frames, 40);

        let out = remove_silence(&input, 25.0, -40.0);
        assert!((out.len() as i64 - 16_000).abs() <= frame as i64);
        assert_eq!(out.samples(), &input.samples()[..16_000]);
    }

    #[test]
    fn equalize_constant_sine_at_target_is_identity() {
        let target = 0.5 / 2f64.sqrt();
        // 250 ms = 4000 samples = 110 periods of 440 Hz, so block RMS is exact
        let x = clip(sine(16_000, 0.5));
        let out = equalize_loudness(&x, 250.0, target);
        for (a, b) in out.samples().iter().zip(x.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn equalize_doubles_half_level_signal() {
        let x = clip(sine(16_000, 0.25));
        let block_rms: Vec<f64> = x
            .samples()
            .chunks(4000)
            .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
            .collect();
        let target = 2.0 * block_rms[0];
        let out = equalize_loudness(&x, 250.0, target);
        for (i, (a, b)) in out.samples().iter().zip(x.samples()).enumerate() {
            let gain = target / block_rms[i / 4000];
            assert!((a - gain * b).abs() < 1e-12);
            assert!((gain - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn equalize_leaves_zero_blocks() {
        let out = equalize_loudness(&clip(vec![0.0; 5000]), 250.0, 0.1);
        assert!(out.samples().iter().all(|&v| v == 0.0));
        assert_eq!(out.len(), 5000);
    }

    #[test]
    fn silence_portions_find_the_gap() {
        let mut x = sine(8000, 0.5);
        x.extend(vec![0.0; 8000]);
        x.extend(sine(8000, 0.5));
        let gaps = silence_portions(&clip(x), 25.0, -40.0, 100.0);
        assert_eq!(gaps.len(), 1);
        assert_eq!(gaps[0].len(), 8000);
    }

    proptest! {
        #[test]
        fn remove_silence_is_idempotent(
            seed in any::<u64>(),
            n in 1usize..6000,
            frame_ms in 1.0f64..40.0,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    let level = if (i / 300) % 3 == 0 { 1e-4 } else { 0.5 };
                    level * rng.random_range(-1.0..1.0)
                })
                .collect();
            let once = remove_silence(&clip(x), frame_ms, -40.0);
            if !once.is_empty() {
                let twice = remove_silence(&once, frame_ms, -40.0);
                prop_assert_eq!(once, twice);
            }
        }

        #[test]
        fn equalized_blocks_hit_target(seed in any::<u64>(), n in 1usize..20_000, target in 0.01f64..0.9) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * rng.random_range(0.0..1.0)).collect();
            let out = equalize_loudness(&clip(x.clone()), 250.0, target);
            for (a, b) in out.samples().chunks(4000).zip(x.chunks(4000)) {
                let rms_in = (b.iter().map(|v| v * v).sum::<f64>() / b.len() as f64).sqrt();
                let rms_out = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
                if rms_in >= LOUDNESS_FLOOR_RMS {
                    prop_assert!((rms_out - target).abs() <= 1e-9);
                }
            }
        }
    }
}
