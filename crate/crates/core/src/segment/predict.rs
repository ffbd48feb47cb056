//! Sliding-window frame-wise prediction and median smoothing.

use std::fmt::Write as _;

use crate::audio::{ms_to_samples, TARGET_SAMPLE_RATE};
use crate::autodiff::kernels::softmax_rows;
use crate::dsp::{frame_count, FeatureMatrix, FRAME_MS, HOP_MS};
use crate::error::{Error, Result};
use crate::model::{argmax, Model};

pub const DEFAULT_MEDIAN_LEN: usize = 200;
pub const DEFAULT_EVAL_STRIDE: usize = 10;

/// Per-frame class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPrediction {
    probs: Vec<f64>,
    n_classes: usize,
}

impl SegmentPrediction {
    /// Rows must each sum to 1 within 1e-9.
    pub fn new(probs: Vec<f64>, n_classes: usize) -> Result<Self> {
        if n_classes == 0 || probs.len() % n_classes != 0 {
            return Err(Error::shape(format!("{} values are not rows of {n_classes}", probs.len())));
        }
        for (t, row) in probs.chunks_exact(n_classes).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::data(format!("frame {t}: probabilities sum to {s}")));
            }
        }
        Ok(Self { probs, n_classes })
    }

    pub fn n_frames(&self) -> usize {
        self.probs.len() / self.n_classes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t * self.n_classes..(t + 1) * self.n_classes]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> Vec<usize> {
        self.probs.chunks_exact(self.n_classes).map(argmax).collect()
    }

    /// `t<TAB>p_0<TAB>…` per frame, `t` being the frame start in seconds.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for t in 0..self.n_frames() {
            write!(s, "{:.2}", t as f64 * HOP_MS / 1000.0).unwrap();
            for p in self.row(t) {
                write!(s, "\t{p:.9}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Reads a dump; rows are renormalized to absorb printing precision.
    pub fn from_tsv(text: &str, n_classes: usize) -> Result<Self> {
        let mut probs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split('\t')
                .skip(1)
                .map(|v| v.trim().parse::<f64>().ok().filter(|p| *p >= 0.0 && p.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .filter(|r| r.len() == n_classes && r.iter().sum::<f64>() > 0.0)
                .ok_or_else(|| Error::data(format!("prediction line {}: expected t and {n_classes} probabilities", n + 1)))?;
            let s: f64 = row.iter().sum();
            probs.extend(row.iter().map(|p| p / s));
        }
        Self::new(probs, n_classes)
    }
}

/// Feature frames covering a clip of `seconds` at 16 kHz.
pub fn window_frames(seconds: f64) -> usize {
    let sr = TARGET_SAMPLE_RATE;
    frame_count(
        (seconds * sr as f64).round() as usize,
        ms_to_samples(FRAME_MS, sr),
        ms_to_samples(HOP_MS, sr),
    )
}

/// Start of the `len`-frame window centred on `t`, shifted to stay inside `n` frames.
pub fn centred_window(t: usize, len: usize, n: usize) -> usize {
    t.saturating_sub(len / 2).min(n.saturating_sub(len))
}

/// Classifies the window around every `stride`-th frame; frames in between
/// hold the last prediction. `stride = 1` evaluates every frame.
pub fn sliding_predict(model: &Model, features: &FeatureMatrix, window_s: f64, stride: usize) -> Result<SegmentPrediction> {
    let w = window_frames(window_s);
    if w < model.min_input_frames() {
        return Err(Error::config(format!(
            "a {window_s} s window has {w} frames; the model needs at least {}",
            model.min_input_frames()
        )));
    }
    let n = features.n_frames();
    if n < model.min_input_frames() {
        return Err(Error::TooShort {
            needed: model.min_input_frames(),
            got: n,
            unit: "frames",
        });
    }
    let w = w.min(n);
    let c = model.n_classes();
    let stride = stride.max(1);
    let mut probs = Vec::with_capacity(n * c);
    let mut current = Vec::new();
    for t in 0..n {
        if t % stride == 0 {
            let s = centred_window(t, w, n);
            let logits = model.logits(&features.slice_frames(s, s + w))?;
            current = softmax_rows(&logits, c);
        }
        probs.extend_from_slice(&current);
    }
    SegmentPrediction::new(probs, c)
}

/// Per-class sliding lower median over `len` frames (window shifted to stay
/// inside the stream), then rows renormalized.
pub fn median_filter(pred: &SegmentPrediction, len: usize) -> SegmentPrediction {
    let n = pred.n_frames();
    let c = pred.n_classes;
    if len <= 1 || n == 0 {
        return pred.clone();
    }
    let w = len.min(n);
    let mut out = vec![0.0; n * c];
    let mut buf = Vec::with_capacity(w);
    for k in 0..c {
        for t in 0..n {
            let s = centred_window(t, w, n);
            buf.clear();
            buf.extend((s..s + w).map(|i| pred.probs[i * c + k]));
            let mid = (w - 1) / 2;
            let (_, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
            out[t * c + k] = *m;
        }
    }
    for row in out.chunks_exact_mut(c) {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|p| *p /= s);
        } else {
            row.iter_mut().for_each(|p| *p = 1.0 / c as f64);
        }
    }
    SegmentPrediction { probs: out, n_classes: c }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(labels: &[usize]) -> SegmentPrediction {
        let probs = labels
            .iter()
            .flat_map(|&l| (0..3).map(move |k| if k == l { 0.8 } else { 0.1 }))
            .collect();
        SegmentPrediction::new(probs, 3).unwrap()
    }

    #[test]
    fn window_frame_counts() {
        assert_eq!(window_frames(0.5), 48);
        assert_eq!(window_frames(1.0), 98);
        assert_eq!(window_frames(2.0), 198);
        assert_eq!(centred_window(0, 98, 1000), 0);
        assert_eq!(centred_window(500, 98, 1000), 451);
        assert_eq!(centred_window(999, 98, 1000), 902);
        assert_eq!(centred_window(3, 98, 50), 0);
    }

    #[test]
    fn glitch_is_removed() {
        let mut labels = vec![0; 300];
        labels.push(1);
        labels.extend(vec![0; 300]);
        let f = median_filter(&one_hot(&labels), 200);
        assert!(f.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn glitch_at_the_edges_is_removed() {
        let mut labels = vec![2; 400];
        labels[0] = 1;
        labels[399] = 0;
        assert!(median_filter(&one_hot(&labels), 200).labels().iter().all(|&l| l == 2));
    }

    #[test]
    fn constant_and_unit_length_are_fixed_points() {
        let p = one_hot(&[1; 50]);
        assert_eq!(median_filter(&p, 200), p);
        let q = one_hot(&[0, 1, 2, 1, 0, 2]);
        assert_eq!(median_filter(&q, 1), q);
    }

    #[test]
    fn filtered_rows_sum_to_one() {
        let probs: Vec<f64> = (0..120)
            .flat_map(|t| {
                let a = ((t * 37) % 11) as f64 / 20.0;
                let b = ((t * 13) % 7) as f64 / 20.0;
                [a, b, 1.0 - a - b]
            })
            .collect();
        let p = SegmentPrediction::new(probs, 3).unwrap();
        let f = median_filter(&p, 20);
        for t in 0..120 {
            assert!((f.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dump_round_trip() {
        let p = one_hot(&[0, 2, 1]);
        let text = p.to_tsv();
        assert!(text.starts_with("0.00\t0.800000000\t0.100000000\t0.100000000\n"));
        let back = SegmentPrediction::from_tsv(&text, 3).unwrap();
        assert_eq!(back.labels(), p.labels());
        assert!(SegmentPrediction::new(vec![0.5, 0.4, 0.0], 3).is_err());
    }
}
