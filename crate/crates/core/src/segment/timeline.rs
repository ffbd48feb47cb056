//! Artificial segmentation streams: random concatenations of class audio
//! with optional natural-silence gaps and per-frame ground truth.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{ms_to_samples, AudioClip, TARGET_SAMPLE_RATE};
use crate::class::{Class, FrameLabel, CLASSES};
use crate::dsp::{frame_count, FRAME_MS, HOP_MS};
use crate::error::{Error, Result};

/// Mean segment lengths in seconds for noise, music, speech and silence.
pub const MEAN_SEGMENT_S: [f64; 4] = [5.0, 10.0, 12.0, 0.5];
pub const MIN_SEGMENT_S: f64 = 0.1;
/// Segments are capped at this multiple of their class mean.
pub const MAX_SEGMENT_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub label: FrameLabel,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Labelled segments tiling a stream sample-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub segments: Vec<Segment>,
    pub sample_rate: u32,
}

impl Timeline {
    pub fn n_samples(&self) -> usize {
        self.segments.last().map_or(0, Segment::end)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate as f64
    }

    /// Label of the segment holding each analysis frame's centre.
    pub fn frame_labels(&self) -> Vec<FrameLabel> {
        let frame = ms_to_samples(FRAME_MS, self.sample_rate);
        let hop = ms_to_samples(HOP_MS, self.sample_rate);
        self.labels_at(frame_count(self.n_samples(), frame, hop), frame, hop)
    }

    /// Labels for exactly `n_frames` frames; centres past the end take the last label.
    pub fn frame_labels_n(&self, n_frames: usize) -> Vec<FrameLabel> {
        let frame = ms_to_samples(FRAME_MS, self.sample_rate);
        let hop = ms_to_samples(HOP_MS, self.sample_rate);
        self.labels_at(n_frames, frame, hop)
    }

    fn labels_at(&self, n_frames: usize, frame: usize, hop: usize) -> Vec<FrameLabel> {
        let mut out = Vec::with_capacity(n_frames);
        let mut s = 0;
        for i in 0..n_frames {
            let centre = i * hop + frame / 2;
            while s + 1 < self.segments.len() && self.segments[s].end() <= centre {
                s += 1;
            }
            out.push(self.segments.get(s).map_or(FrameLabel::Silence, |seg| seg.label));
        }
        out
    }

    /// Merges runs of per-frame class indices into segments covering
    /// `n_samples`; boundaries sit halfway between neighbouring frame centres.
    pub fn from_frame_labels(labels: &[usize], n_samples: usize, sample_rate: u32) -> Result<Self> {
        let frame = ms_to_samples(FRAME_MS, sample_rate);
        let hop = ms_to_samples(HOP_MS, sample_rate);
        let class = |i: usize| {
            Class::from_index(i)
                .map(FrameLabel::Class)
                .ok_or_else(|| Error::data(format!("class index {i} out of range")))
        };
        let mut segments: Vec<Segment> = Vec::new();
        for (t, &l) in labels.iter().enumerate() {
            let label = class(l)?;
            if segments.last().is_some_and(|s| s.label == label) {
                continue;
            }
            let start = if t == 0 { 0 } else { (t * hop + frame / 2 - hop / 2).min(n_samples) };
            if let Some(prev) = segments.last_mut() {
                prev.len = start - prev.start;
            }
            segments.push(Segment { label, start, len: 0 });
        }
        if let Some(last) = segments.last_mut() {
            last.len = n_samples.saturating_sub(last.start);
        }
        segments.retain(|s| s.len > 0);
        Ok(Self { segments, sample_rate })
    }

    /// `start_s<TAB>end_s<TAB>class` per segment.
    pub fn to_tsv(&self) -> String {
        let sr = self.sample_rate as f64;
        self.segments
            .iter()
            .map(|s| format!("{}\t{}\t{}\n", s.start as f64 / sr, s.end() as f64 / sr, s.label))
            .collect()
    }

    pub fn from_tsv(text: &str, sample_rate: u32) -> Result<Self> {
        let sr = sample_rate as f64;
        let mut segments: Vec<Segment> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::data(format!("timeline line {}: expected start_s, end_s and a class", n + 1));
            let f: Vec<&str> = line.split('\t').collect();
            let [a, b, label] = f[..] else { return Err(bad()) };
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            let (start, end) = ((a * sr).round() as usize, (b * sr).round() as usize);
            let expected = segments.last().map_or(0, Segment::end);
            if !(a >= 0.0) || end < start || start != expected {
                return Err(Error::data(format!("timeline line {}: segments must be contiguous", n + 1)));
            }
            segments.push(Segment {
                label: label.trim().parse()?,
                start,
                len: end - start,
            });
        }
        Ok(Self { segments, sample_rate })
    }

    pub fn load(path: impl AsRef<Path>, sample_rate: u32) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?, sample_rate)
    }
}

/// Source audio per class plus natural silence.
#[derive(Debug, Clone, Default)]
pub struct SegmentPools {
    pub classes: [Vec<AudioClip>; 3],
    pub silence: Vec<AudioClip>,
}

impl SegmentPools {
    fn pool(&self, label: FrameLabel) -> &[AudioClip] {
        match label {
            FrameLabel::Class(c) => &self.classes[c.index()],
            FrameLabel::Silence => &self.silence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimelineOptions {
    pub min_total_s: f64,
    pub max_total_s: f64,
    /// Means for noise, music, speech, silence.
    pub mean_segment_s: [f64; 4],
    /// Probability that a transition goes through a silence gap.
    pub silence_ratio: f64,
}

impl Default for TimelineOptions {
    fn default() -> Self {
        Self {
            min_total_s: 20.0,
            max_total_s: 120.0,
            mean_segment_s: MEAN_SEGMENT_S,
            silence_ratio: 0.5,
        }
    }
}

fn truncated_mean(rate: f64, a: f64, b: f64) -> f64 {
    let w = b - a;
    let e = (-rate * w).exp();
    a + 1.0 / rate - w * e / (1.0 - e)
}

/// Exponential on `[a, b]` whose (truncated) mean is `mean`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedExp {
    pub rate: f64,
    pub a: f64,
    pub b: f64,
}

impl TruncatedExp {
    pub fn with_mean(mean: f64, a: f64, b: f64) -> Result<Self> {
        if !(a < mean && mean < (a + b) / 2.0) {
            return Err(Error::config(format!("no decaying exponential on [{a}, {b}] has mean {mean}")));
        }
        // the mean falls monotonically from (a+b)/2 as the rate grows
        let (mut lo, mut hi) = (1e-9, 1.0);
        while truncated_mean(hi, a, b) > mean {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if truncated_mean(mid, a, b) > mean {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Self { rate: 0.5 * (lo + hi), a, b })
    }

    pub fn mean(&self) -> f64 {
        truncated_mean(self.rate, self.a, self.b)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let span = 1.0 - (-self.rate * (self.b - self.a)).exp();
        self.a - (1.0 - u * span).ln() / self.rate
    }
}

/// `len` samples drawn from random positions of random pool clips.
fn fill<R: Rng>(pool: &[AudioClip], len: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let clip = &pool[rng.random_range(0..pool.len())];
        let need = len - out.len();
        let start = if clip.len() > need { rng.random_range(0..=clip.len() - need) } else { 0 };
        let take = need.min(clip.len() - start);
        out.extend_from_slice(&clip.samples()[start..start + take]);
    }
    out
}

/// One random stream. Adjacent class segments always differ, so label runs
/// correspond one-to-one with segments.
pub fn synth_timeline(pools: &SegmentPools, opts: &TimelineOptions, seed: u64) -> Result<(AudioClip, Timeline)> {
    for (c, pool) in CLASSES.iter().zip(&pools.classes) {
        if pool.iter().all(AudioClip::is_empty) {
            return Err(Error::config(format!("no {c} audio to build timelines from")));
        }
    }
    let sr = TARGET_SAMPLE_RATE;
    let all_clips = pools.classes.iter().flatten().chain(&pools.silence);
    if let Some(bad) = all_clips.clone().find(|c| c.sample_rate() != sr) {
        return Err(Error::config(format!("pool audio must be at {sr} Hz, found {} Hz", bad.sample_rate())));
    }
    let use_silence = opts.silence_ratio > 0.0;
    if use_silence && pools.silence.iter().all(AudioClip::is_empty) {
        return Err(Error::config("no natural silence audio to build timelines from"));
    }
    if !(opts.min_total_s > 0.0 && opts.min_total_s <= opts.max_total_s) {
        return Err(Error::config("timeline length range is empty"));
    }
    let [d0, d1, d2, d3] = opts
        .mean_segment_s
        .map(|m| TruncatedExp::with_mean(m, MIN_SEGMENT_S, MAX_SEGMENT_FACTOR * m));
    let dists = [d0?, d1?, d2?, d3?];
    let pools_nonempty = SegmentPools {
        classes: pools.classes.clone().map(|p| p.into_iter().filter(|c| !c.is_empty()).collect()),
        silence: pools.silence.iter().filter(|c| !c.is_empty()).cloned().collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_s = rng.random_range(opts.min_total_s..=opts.max_total_s);
    let total = (total_s * sr as f64).round() as usize;
    let mut samples = Vec::with_capacity(total);
    let mut segments: Vec<Segment> = Vec::new();
    let mut prev: Option<Class> = None;
    while samples.len() < total {
        let label = if prev.is_some()
            && segments.last().is_some_and(|s| s.label != FrameLabel::Silence)
            && use_silence
            && rng.random_bool(opts.silence_ratio)
        {
            FrameLabel::Silence
        } else {
            let choices: Vec<Class> = CLASSES.into_iter().filter(|&c| Some(c) != prev).collect();
            let c = choices[rng.random_range(0..choices.len())];
            prev = Some(c);
            FrameLabel::Class(c)
        };
        let d = match label {
            FrameLabel::Class(c) => dists[c.index()],
            FrameLabel::Silence => dists[3],
        };
        let len = ((d.sample(&mut rng) * sr as f64).round() as usize).min(total - samples.len());
        segments.push(Segment {
            label,
            start: samples.len(),
            len,
        });
        samples.extend(fill(pools_nonempty.pool(label), len, &mut rng));
    }
    Ok((AudioClip::from_parts_unchecked(samples, sr), Timeline { segments, sample_rate: sr }))
}
