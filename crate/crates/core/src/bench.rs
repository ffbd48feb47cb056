//! Per-sample latency at batch size 1, model-only and end to end.

use std::fmt;
use std::hint::black_box;
use std::time::Instant;

use crate::audio::TARGET_SAMPLE_RATE;
use crate::class::Class;
use crate::dsp::{FeatureExtractor, FeatureKind};
use crate::error::{Error, Result};
use crate::model::{write_model, Model};
use crate::synthetic::synth_class_clip;

pub const DEFAULT_WARMUP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles; the median of an even count is the lower one.
    pub fn from_samples(ms: &[f64]) -> Self {
        let mut s = ms.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n == 0 {
            return Self {
                median_ms: 0.0,
                mean_ms: 0.0,
                p95_ms: 0.0,
            };
        }
        let rank = |q: f64| s[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            median_ms: rank(0.5),
            mean_ms: s.iter().sum::<f64>() / n as f64,
            p95_ms: rank(0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub model: String,
    pub clip_len_s: f64,
    pub threads: usize,
    pub warmup: usize,
    pub param_count: usize,
    pub weight_bytes: usize,
    /// Forward pass on precomputed features, one entry per timed iteration
    /// and thread.
    pub model_only_ms: Vec<f64>,
    pub model_only: LatencyStats,
    /// Feature extraction plus forward pass.
    pub end_to_end: LatencyStats,
    /// Median cost of timing an empty body, not subtracted above.
    pub harness_overhead_ms: f64,
    /// Inferences per second across all threads.
    pub throughput: f64,
}

fn time_ms(f: impl FnOnce()) -> f64 {
    let t = Instant::now();
    f();
    t.elapsed().as_secs_f64() * 1e3
}

/// Times `iters` single-sample inferences per thread after `warmup` untimed ones.
pub fn bench_latency(model: &Model, clip_len_s: f64, iters: usize, warmup: usize, threads: usize, seed: u64) -> Result<BenchReport> {
    if iters == 0 || threads == 0 {
        return Err(Error::config("iterations and threads must be positive"));
    }
    let extractor = FeatureExtractor::new(FeatureKind::Mfcc, Some(Default::default()))?;
    let clip = synth_class_clip(Class::Speech, clip_len_s, seed);
    let features = extractor.features_of(&clip)?;
    if features.n_frames() < model.min_input_frames() {
        return Err(Error::config(format!("a {clip_len_s} s clip is too short for the model")));
    }
    let inference = model.compile::<f32>();
    let x: Vec<f32> = features.values().iter().map(|&v| v as f32).collect();
    let t = features.n_frames();

    let mut buf = Vec::new();
    write_model(&mut buf, model)?;

    let overhead: Vec<f64> = (0..iters).map(|_| time_ms(|| black_box(()))).collect();
    let run = || -> Result<Vec<f64>> {
        for _ in 0..warmup {
            black_box(inference.logits(black_box(&x), t)?);
        }
        let mut out = Vec::with_capacity(iters);
        for _ in 0..iters {
            let mut r = Ok(Vec::new());
            out.push(time_ms(|| r = inference.logits(black_box(&x), t)));
            black_box(r?);
        }
        Ok(out)
    };
    let wall = Instant::now();
    let model_only_ms: Vec<f64> = if threads == 1 {
        run()?
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads).map(|_| s.spawn(run)).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("benchmark thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
        .concat()
    };
    let wall_s = wall.elapsed().as_secs_f64();

    let mut e2e = Vec::with_capacity(iters);
    for i in 0..warmup + iters {
        let mut r = Ok(Vec::new());
        let ms = time_ms(|| {
            r = extractor
                .extract(black_box(&clip))
                .and_then(|f| model.compile::<f32>().logits(&f.values().iter().map(|&v| v as f32).collect::<Vec<_>>(), f.n_frames()));
        });
        black_box(r?);
        if i >= warmup {
            e2e.push(ms);
        }
    }

    Ok(BenchReport {
        model: model.config().name.clone(),
        clip_len_s,
        threads,
        warmup,
        param_count: model.param_count(),
        weight_bytes: buf.len(),
        model_only: LatencyStats::from_samples(&model_only_ms),
        throughput: model_only_ms.len() as f64 / wall_s.max(1e-12),
        model_only_ms,
        end_to_end: LatencyStats::from_samples(&e2e),
        harness_overhead_ms: LatencyStats::from_samples(&overhead).median_ms,
    })
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model            {}", self.model)?;
        writeln!(f, "parameters       {}", self.param_count)?;
        writeln!(f, "weight file      {} bytes", self.weight_bytes)?;
        writeln!(
            f,
            "clip             {} s at {} Hz, batch 1, {} thread(s)",
            self.clip_len_s, TARGET_SAMPLE_RATE, self.threads
        )?;
        writeln!(f, "iterations       {} (+{} warmup)", self.model_only_ms.len(), self.warmup)?;
        writeln!(f, "{:<16} {:>10} {:>10} {:>10}", "latency (ms)", "median", "mean", "p95")?;
        for (name, s) in [("model only", self.model_only), ("end to end", self.end_to_end)] {
            writeln!(f, "{name:<16} {:>10.4} {:>10.4} {:>10.4}", s.median_ms, s.mean_ms, s.p95_ms)?;
        }
        writeln!(f, "timer overhead   {:.6} ms", self.harness_overhead_ms)?;
        write!(f, "throughput       {:.1} inferences/s", self.throughput)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn percentiles() {
        let s = LatencyStats::from_samples(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(s.median_ms, 3.0);
        assert_eq!(s.mean_ms, 3.0);
        assert_eq!(s.p95_ms, 5.0);
        let even = LatencyStats::from_samples(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(even.median_ms, 2.0);
    }

    #[test]
    fn report_counts_and_sizes() {
        let m = Model::build(&ModelConfig::slim(), 0).unwrap();
        let r = bench_latency(&m, 0.5, 20, 3, 1, 0).unwrap();
        assert_eq!(r.model_only_ms.len(), 20);
        assert!(r.model_only.median_ms > 0.0 && r.model_only.median_ms <= r.model_only.p95_ms);
        assert_eq!(r.param_count, 4_699);
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        assert_eq!(r.weight_bytes, buf.len());
        let two = bench_latency(&m, 0.5, 5, 1, 2, 0).unwrap();
        assert_eq!(two.model_only_ms.len(), 10);
    }
}
