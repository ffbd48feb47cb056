//! Synthetic three-class audio: band-limited noise, harmonic chords and
//! amplitude-modulated harmonic "speech-like" tones, plus quiet room tone for
//! silence gaps.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{write_wav, AudioClip, TARGET_SAMPLE_RATE};
use crate::class::{Class, CLASSES};
use crate::error::Result;

/// RMS of generated room tone, below the loudness equalizer's floor so it stays quiet.
pub const ROOM_TONE_RMS: f64 = 5e-7;

fn sr() -> f64 {
    TARGET_SAMPLE_RATE as f64
}

fn set_rms(x: &mut [f64], target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / rms);
    }
}

fn white<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// White noise restricted to `[lo, hi]` Hz by zeroing FFT bins.
fn band_limited<R: Rng>(n: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = white(n, rng).into_iter().map(|v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * sr() / n as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|c| c.re / n as f64).collect()
}

fn noise<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    // the band wanders: crossfaded chunks, each with its own passband
    let fade = (0.02 * sr()) as usize;
    let mut x = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let len = ((rng.random_range(0.4..1.2) * sr()) as usize).min(n - start);
        let lo: f64 = rng.random_range(150.0..2500.0);
        let hi = (lo * rng.random_range(1.8..4.0)).min(7800.0);
        let span = (len + fade).min(n - start);
        let mut chunk = band_limited(span, lo, hi, rng);
        set_rms(&mut chunk, 1.0);
        for (i, v) in chunk.iter().enumerate() {
            let up = if start == 0 { 1.0 } else { (i as f64 / fade as f64).min(1.0) };
            let down = ((span - i) as f64 / fade as f64).min(1.0);
            let down = if start + span == n { 1.0 } else { down };
            x[start + i] += up * down * v;
        }
        start += len;
    }
    // slow drift in level, well below syllable rates
    let rate = rng.random_range(0.1..0.6);
    let phase = rng.random_range(0.0..2.0 * PI);
    for (i, v) in x.iter_mut().enumerate() {
        *v *= 1.0 + 0.2 * (2.0 * PI * rate * i as f64 / sr() + phase).sin();
    }
    x
}

fn midi_hz(m: f64) -> f64 {
    440.0 * 2f64.powf((m - 69.0) / 12.0)
}

fn chords<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut x = vec![0.0; n];
    let n_harm = rng.random_range(4..8);
    let mut start = 0;
    while start < n {
        let len = ((rng.random_range(0.6..1.6) * sr()) as usize).min(n - start);
        let root = rng.random_range(45..70) as f64;
        let third = if rng.random_bool(0.5) { 4.0 } else { 3.0 };
        let mut notes = vec![root, root + third, root + 7.0];
        if rng.random_bool(0.4) {
            notes.push(root + 12.0);
        }
        for &m in &notes {
            let f0 = midi_hz(m);
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            for h in 1..=n_harm {
                let f = f0 * h as f64;
                if f > 7500.0 {
                    break;
                }
                let amp = 1.0 / h as f64;
                for i in 0..len {
                    let t = i as f64 / sr();
                    let env = (t / 0.02).min(1.0) * (-t * 0.8).exp();
                    x[start + i] += amp * env * (2.0 * PI * f * t + phase * h as f64).sin();
                }
            }
        }
        start += len;
    }
    x
}

fn speech_like<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut x = vec![0.0; n];
    let f0_base = rng.random_range(95.0..230.0);
    let glide_rate = rng.random_range(1.5..4.0);
    let syl_rate = rng.random_range(3.0..6.0);
    let mut start = 0;
    let mut phase = 0.0;
    let mut t_global = 0usize;
    while start < n {
        // one syllable: fixed formants, pitch glide, raised-sine envelope
        let len = ((sr() / syl_rate * rng.random_range(0.7..1.3)) as usize).min(n - start);
        let f1 = rng.random_range(300.0..900.0);
        let f2 = rng.random_range(900.0..2600.0);
        let gain = |f: f64| {
            let r = |c: f64, w: f64| (-((f - c) / w).powi(2)).exp();
            r(f1, 150.0) + 0.6 * r(f2, 250.0) + 0.02
        };
        let n_harm = (4000.0 / f0_base) as usize;
        let amps: Vec<f64> = (1..=n_harm).map(|h| gain(h as f64 * f0_base)).collect();
        for i in 0..len {
            let tg = t_global as f64 / sr();
            let f0 = f0_base * (1.0 + 0.12 * (2.0 * PI * glide_rate * tg).sin());
            phase += 2.0 * PI * f0 / sr();
            let env = (PI * i as f64 / len as f64).sin().powf(1.5);
            let mut v = 0.0;
            for (h, a) in amps.iter().enumerate() {
                v += a * ((h + 1) as f64 * phase).sin();
            }
            x[start + i] = env * v;
            t_global += 1;
        }
        start += len;
    }
    let mut breath = band_limited(n, 2000.0, 6000.0, rng);
    set_rms(&mut breath, 0.02);
    let mut out = x;
    set_rms(&mut out, 1.0);
    out.iter_mut().zip(&breath).for_each(|(v, b)| *v += b);
    out
}

/// `seconds` of one class at 16 kHz with an RMS between 0.05 and 0.2.
pub fn synth_class_clip(class: Class, seconds: f64, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class.index() as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let n = (seconds * sr()).round() as usize;
    let mut x = match class {
        Class::Noise => noise(n, &mut rng),
        Class::Music => chords(n, &mut rng),
        Class::Speech => speech_like(n, &mut rng),
    };
    let level = rng.random_range(0.05..0.2);
    set_rms(&mut x, level);
    x.iter_mut().for_each(|v| *v = v.clamp(-0.99, 0.99));
    AudioClip::from_parts_unchecked(x, TARGET_SAMPLE_RATE)
}

/// Quiet low-passed noise standing in for natural silence.
pub fn room_tone(seconds: f64, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * sr()).round() as usize;
    let mut x = band_limited(n.max(1), 20.0, 1500.0, &mut rng);
    x.truncate(n);
    set_rms(&mut x, ROOM_TONE_RMS);
    AudioClip::from_parts_unchecked(x, TARGET_SAMPLE_RATE)
}

/// `files_per_class` clips per class, each `seconds` long.
pub fn synth_corpus(files_per_class: usize, seconds: f64, seed: u64) -> Vec<(Class, AudioClip)> {
    let mut out = Vec::with_capacity(3 * files_per_class);
    for c in CLASSES {
        for i in 0..files_per_class {
            out.push((c, synth_class_clip(c, seconds, seed.wrapping_mul(1_000_003).wrapping_add(i as u64))));
        }
    }
    out
}

/// Writes a corpus as `dir/<class>/<class>_<i>.wav` (16-bit PCM) and returns the paths.
pub fn write_corpus(dir: impl AsRef<Path>, files_per_class: usize, seconds: f64, seed: u64) -> Result<Vec<(Class, PathBuf)>> {
    let mut out = Vec::new();
    let mut counters = [0usize; 3];
    for (class, clip) in synth_corpus(files_per_class, seconds, seed) {
        let sub = dir.as_ref().join(class.name());
        std::fs::create_dir_all(&sub)?;
        let path = sub.join(format!("{}_{:03}.wav", class.name(), counters[class.index()]));
        counters[class.index()] += 1;
        write_wav(&path, &clip)?;
        out.push((class, path));
    }
    Ok(out)
}
