//! Differentiable operations recorded on a [`Tape`].
//!
//! Sequence kernels take `[time, channel]` or `[batch, time, channel]` inputs;
//! dense and loss ops take `[features]` or `[batch, features]`.

use rand::Rng;

use super::kernels::{self, sigmoid, ConvGeom, SELU_ALPHA, SELU_SCALE};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Alpha-dropout saturation value, `-λα` for SELU.
pub const ALPHA_DROPOUT_PRIME: f64 = -1.758_099_340_847_376_6;

fn seq_dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [t, c] => Ok((1, t, c)),
        [b, t, c] => Ok((b, t, c)),
        _ => Err(Error::shape(format!("{what}: expected [T, C] or [B, T, C], got {shape:?}"))),
    }
}

fn row_dims(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match *shape {
        [d] => Ok((1, d)),
        [b, d] => Ok((b, d)),
        _ => Err(Error::shape(format!("{what}: expected [D] or [B, D], got {shape:?}"))),
    }
}

fn seq_shape(rank: usize, b: usize, t: usize, c: usize) -> Vec<usize> {
    if rank == 2 {
        vec![t, c]
    } else {
        vec![b, t, c]
    }
}

fn same_shape(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let out = Tensor::from_raw(self.shape(a).to_vec(), data);
        Ok(self.push(out, &[a, b], || Box::new(|g| vec![g.to_vec(), g.to_vec()])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let (av, bv) = (self.data(a).to_vec(), self.data(b).to_vec());
        let data = av.iter().zip(&bv).map(|(x, y)| x * y).collect();
        let out = Tensor::from_raw(self.shape(a).to_vec(), data);
        Ok(self.push(out, &[a, b], || {
            Box::new(move |g| {
                vec![
                    g.iter().zip(&bv).map(|(g, y)| g * y).collect(),
                    g.iter().zip(&av).map(|(g, x)| g * x).collect(),
                ]
            })
        }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.data(x).iter().map(|v| v * c).collect();
        let out = Tensor::from_raw(self.shape(x).to_vec(), data);
        self.push(out, &[x], || Box::new(move |g| vec![g.iter().map(|v| v * c).collect()]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let out = Tensor::scalar(self.data(x).iter().sum());
        self.push(out, &[x], || Box::new(move |g| vec![vec![g[0]; n]]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// `Σ_i weights[i] · x[i]`.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::shape("weighted_sum: weight count differs from tensor size"));
        }
        let out = Tensor::scalar(self.data(x).iter().zip(weights).map(|(a, b)| a * b).sum());
        let w = weights.to_vec();
        Ok(self.push(out, &[x], || Box::new(move |g| vec![w.iter().map(|w| w * g[0]).collect()])))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, &[x], || Box::new(|g| vec![g.to_vec()])))
    }

    /// Full 1D convolution with `w: [K, C_in, C_out]` and `b: [C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, causal: bool) -> Result<Var> {
        let rank = self.value(x).ndim();
        let (batch, t_in, c_in) = seq_dims(self.shape(x), "conv1d")?;
        let &[kernel, wc, c_out] = self.shape(w) else {
            return Err(Error::shape(format!("conv1d: kernel must be [K, C_in, C_out], got {:?}", self.shape(w))));
        };
        if wc != c_in || self.shape(b) != [c_out] || kernel == 0 || stride == 0 {
            return Err(Error::shape(format!(
                "conv1d: input {:?}, kernel {:?}, bias {:?}, stride {stride}",
                self.shape(x),
                self.shape(w),
                self.shape(b)
            )));
        }
        let geom = ConvGeom {
            batch,
            t_in,
            c_in,
            c_out,
            kernel,
            stride,
            causal,
        };
        let t_out = geom.t_out();
        if t_out == 0 {
            return Err(Error::TooShort {
                needed: kernel,
                got: t_in,
                unit: "frames",
            });
        }
        let (xv, wv) = (self.data(x).to_vec(), self.data(w).to_vec());
        let y = kernels::conv1d(&xv, &wv, self.data(b), geom);
        let out = Tensor::from_raw(seq_shape(rank, batch, t_out, c_out), y);
        Ok(self.push(out, &[x, w, b], || {
            Box::new(move |g| {
                let mut dx = vec![0.0; xv.len()];
                let mut dw = vec![0.0; wv.len()];
                let mut db = vec![0.0; c_out];
                for bi in 0..batch {
                    for t in 0..t_out {
                        let gy = &g[(bi * t_out + t) * c_out..(bi * t_out + t + 1) * c_out];
                        db.iter_mut().zip(gy).for_each(|(d, v)| *d += v);
                        for k in 0..kernel {
                            let Some(p) = kernels::tap_index(t, k, kernel, stride, causal, t_in) else {
                                continue;
                            };
                            let base = (bi * t_in + p) * c_in;
                            for c in 0..c_in {
                                let wr = &wv[(k * c_in + c) * c_out..(k * c_in + c + 1) * c_out];
                                dx[base + c] += wr.iter().zip(gy).map(|(w, g)| w * g).sum::<f64>();
                                let xval = xv[base + c];
                                let dwr = &mut dw[(k * c_in + c) * c_out..(k * c_in + c + 1) * c_out];
                                dwr.iter_mut().zip(gy).for_each(|(d, g)| *d += xval * g);
                            }
                        }
                    }
                }
                vec![dx, dw, db]
            })
        }))
    }

    /// Per-channel convolution with `w: [K, C]`, no bias.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, stride: usize, causal: bool) -> Result<Var> {
        let rank = self.value(x).ndim();
        let (batch, t_in, c) = seq_dims(self.shape(x), "depthwise_conv1d")?;
        let &[kernel, wc] = self.shape(w) else {
            return Err(Error::shape(format!("depthwise kernel must be [K, C], got {:?}", self.shape(w))));
        };
        if wc != c || kernel == 0 || stride == 0 {
            return Err(Error::shape(format!(
                "depthwise_conv1d: input {:?}, kernel {:?}",
                self.shape(x),
                self.shape(w)
            )));
        }
        let geom = ConvGeom {
            batch,
            t_in,
            c_in: c,
            c_out: c,
            kernel,
            stride,
            causal,
        };
        let t_out = geom.t_out();
        if t_out == 0 {
            return Err(Error::TooShort {
                needed: kernel,
                got: t_in,
                unit: "frames",
            });
        }
        let (xv, wv) = (self.data(x).to_vec(), self.data(w).to_vec());
        let y = kernels::depthwise_conv1d(&xv, &wv, geom);
        let out = Tensor::from_raw(seq_shape(rank, batch, t_out, c), y);
        Ok(self.push(out, &[x, w], || {
            Box::new(move |g| {
                let mut dx = vec![0.0; xv.len()];
                let mut dw = vec![0.0; wv.len()];
                for bi in 0..batch {
                    for t in 0..t_out {
                        let gy = &g[(bi * t_out + t) * c..(bi * t_out + t + 1) * c];
                        for k in 0..kernel {
                            let Some(p) = kernels::tap_index(t, k, kernel, stride, causal, t_in) else {
                                continue;
                            };
                            let base = (bi * t_in + p) * c;
                            for ch in 0..c {
                                dx[base + ch] += gy[ch] * wv[k * c + ch];
                                dw[k * c + ch] += gy[ch] * xv[base + ch];
                            }
                        }
                    }
                }
                vec![dx, dw]
            })
        }))
    }

    /// Depthwise convolution with `w_depth: [K, C_in]` followed by a pointwise
    /// mix `w_point: [C_in, C_out]` plus bias.
    pub fn separable_conv1d(
        &mut self,
        x: Var,
        w_depth: Var,
        w_point: Var,
        b: Var,
        stride: usize,
        causal: bool,
    ) -> Result<Var> {
        let depth = self.depthwise_conv1d(x, w_depth, stride, causal)?;
        let &[c_in, c_out] = self.shape(w_point) else {
            return Err(Error::shape(format!("pointwise kernel must be [C_in, C_out], got {:?}", self.shape(w_point))));
        };
        let point = self.reshape(w_point, [1, c_in, c_out])?;
        self.conv1d(depth, point, b, 1, causal)
    }

    /// `tanh(a) ⊙ σ(g)`.
    pub fn gated(&mut self, a: Var, g: Var) -> Result<Var> {
        same_shape(self, a, g, "gated")?;
        let (ta, sg): (Vec<f64>, Vec<f64>) = self
            .data(a)
            .iter()
            .zip(self.data(g))
            .map(|(&a, &g)| (a.tanh(), sigmoid(g)))
            .unzip();
        let data = ta.iter().zip(&sg).map(|(t, s)| t * s).collect();
        let out = Tensor::from_raw(self.shape(a).to_vec(), data);
        Ok(self.push(out, &[a, g], || {
            Box::new(move |go| {
                let da = go.iter().zip(&ta).zip(&sg).map(|((g, t), s)| g * (1.0 - t * t) * s).collect();
                let dg = go.iter().zip(&ta).zip(&sg).map(|((g, t), s)| g * t * s * (1.0 - s)).collect();
                vec![da, dg]
            })
        }))
    }

    /// Channels `[start, end)` of the last axis.
    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| Error::shape("slice of a scalar"))?;
        if start >= end || end > c {
            return Err(Error::shape(format!("channel slice {start}..{end} of {c}")));
        }
        let w = end - start;
        let data: Vec<f64> = self.data(x).chunks_exact(c).flat_map(|r| r[start..end].iter().copied()).collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = w;
        let out = Tensor::from_raw(out_shape, data);
        Ok(self.push(out, &[x], || {
            Box::new(move |g| {
                let rows = g.len() / w;
                let mut dx = vec![0.0; rows * c];
                for (r, gr) in g.chunks_exact(w).enumerate() {
                    dx[r * c + start..r * c + end].copy_from_slice(gr);
                }
                vec![dx]
            })
        }))
    }

    /// Splits the channel axis in half and applies [`Tape::gated`] to the halves.
    pub fn gated_split(&mut self, x: Var) -> Result<Var> {
        let c = *self.shape(x).last().ok_or_else(|| Error::shape("gated_split of a scalar"))?;
        if c % 2 != 0 {
            return Err(Error::shape(format!("gated_split needs an even channel count, got {c}")));
        }
        let a = self.slice_channels(x, 0, c / 2)?;
        let g = self.slice_channels(x, c / 2, c)?;
        self.gated(a, g)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape(format!("concat_channels: {sa:?} and {sb:?}")));
        }
        let (ca, cb) = (*sa.last().unwrap(), *sb.last().unwrap());
        let data = kernels::concat_rows(self.data(a), ca, self.data(b), cb);
        let mut shape = sa;
        *shape.last_mut().unwrap() = ca + cb;
        let out = Tensor::from_raw(shape, data);
        Ok(self.push(out, &[a, b], || {
            Box::new(move |g| {
                let mut ga = Vec::with_capacity(g.len() / (ca + cb) * ca);
                let mut gb = Vec::with_capacity(g.len() / (ca + cb) * cb);
                for row in g.chunks_exact(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![ga, gb]
            })
        }))
    }

    /// Affine map with `w: [D_in, D_out]` and `b: [D_out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let rank = self.value(x).ndim();
        let (rows, d_in) = row_dims(self.shape(x), "dense")?;
        let &[wi, d_out] = self.shape(w) else {
            return Err(Error::shape(format!("dense weight must be [D_in, D_out], got {:?}", self.shape(w))));
        };
        if wi != d_in || self.shape(b) != [d_out] {
            return Err(Error::shape(format!(
                "dense: input {:?}, weight {:?}, bias {:?}",
                self.shape(x),
                self.shape(w),
                self.shape(b)
            )));
        }
        let (xv, wv) = (self.data(x).to_vec(), self.data(w).to_vec());
        let y = kernels::dense(&xv, &wv, self.data(b), d_in, d_out);
        let shape = if rank == 1 { vec![d_out] } else { vec![rows, d_out] };
        let out = Tensor::from_raw(shape, y);
        Ok(self.push(out, &[x, w, b], || {
            Box::new(move |g| {
                let mut dx = vec![0.0; xv.len()];
                let mut dw = vec![0.0; wv.len()];
                let mut db = vec![0.0; d_out];
                for r in 0..rows {
                    let gy = &g[r * d_out..(r + 1) * d_out];
                    db.iter_mut().zip(gy).for_each(|(d, v)| *d += v);
                    for i in 0..d_in {
                        let wr = &wv[i * d_out..(i + 1) * d_out];
                        dx[r * d_in + i] = wr.iter().zip(gy).map(|(w, g)| w * g).sum();
                        let xval = xv[r * d_in + i];
                        dw[i * d_out..(i + 1) * d_out]
                            .iter_mut()
                            .zip(gy)
                            .for_each(|(d, g)| *d += xval * g);
                    }
                }
                vec![dx, dw, db]
            })
        }))
    }

    pub fn selu(&mut self, x: Var) -> Var {
        let xv = self.data(x).to_vec();
        let data = xv.iter().map(|&v| kernels::selu(v)).collect();
        let out = Tensor::from_raw(self.shape(x).to_vec(), data);
        self.push(out, &[x], || {
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(&xv)
                    .map(|(g, &v)| {
                        let d = if v > 0.0 { SELU_SCALE } else { SELU_SCALE * SELU_ALPHA * v.exp() };
                        g * d
                    })
                    .collect()]
            })
        })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let c = *self.shape(x).last().ok_or_else(|| Error::shape("softmax of a scalar"))?;
        let y = kernels::softmax_rows(self.data(x), c);
        let out = Tensor::from_raw(self.shape(x).to_vec(), y.clone());
        Ok(self.push(out, &[x], || {
            Box::new(move |g| {
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks_exact(c).zip(y.chunks_exact(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                vec![dx]
            })
        }))
    }

    /// Mean over time: `[T, C] → [C]`, `[B, T, C] → [B, C]`.
    pub fn global_avg_pool_time(&mut self, x: Var) -> Result<Var> {
        let rank = self.value(x).ndim();
        let (batch, t, c) = seq_dims(self.shape(x), "global_avg_pool_time")?;
        let y = kernels::mean_over_time(self.data(x), batch, t, c);
        let shape = if rank == 2 { vec![c] } else { vec![batch, c] };
        let out = Tensor::from_raw(shape, y);
        Ok(self.push(out, &[x], || {
            Box::new(move |g| {
                let mut dx = Vec::with_capacity(batch * t * c);
                for b in 0..batch {
                    let gr = &g[b * c..(b + 1) * c];
                    for _ in 0..t {
                        dx.extend(gr.iter().map(|v| v / t as f64));
                    }
                }
                vec![dx]
            })
        }))
    }

    /// Inverted dropout; the identity when not training or `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_raw(self.shape(x).to_vec(), data);
        Ok(self.push(out, &[x], || Box::new(move |g| vec![g.iter().zip(&mask).map(|(g, m)| g * m).collect()])))
    }

    /// Dropout that keeps SELU activations at zero mean and unit variance:
    /// dropped units are set to `α'` and an affine correction is applied.
    pub fn alpha_dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let q = 1.0 - rate;
        let alpha = ALPHA_DROPOUT_PRIME;
        let a = (q + alpha * alpha * q * rate).powf(-0.5);
        let b = -a * alpha * rate;
        let keep: Vec<bool> = (0..self.value(x).len()).map(|_| rng.random::<f64>() >= rate).collect();
        let data = self
            .data(x)
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| a * if k { v } else { alpha } + b)
            .collect();
        let out = Tensor::from_raw(self.shape(x).to_vec(), data);
        Ok(self.push(out, &[x], || {
            Box::new(move |g| vec![g.iter().zip(&keep).map(|(g, &k)| if k { a * g } else { 0.0 }).collect()])
        }))
    }

    /// Mean of `-log softmax(logits)[label]` over the batch.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, c) = row_dims(self.shape(logits), "cross_entropy")?;
        check_labels(labels, rows, c)?;
        let logp = kernels::log_softmax_rows(self.data(logits), c);
        let loss = labels.iter().enumerate().map(|(r, &l)| -logp[r * c + l]).sum::<f64>() / rows as f64;
        let labels = labels.to_vec();
        Ok(self.push(Tensor::scalar(loss), &[logits], || {
            Box::new(move |g| {
                let scale = g[0] / rows as f64;
                let mut d: Vec<f64> = logp.iter().map(|lp| lp.exp() * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * c + l] -= scale;
                }
                vec![d]
            })
        }))
    }

    /// Batch mean of `w · T² · CE(softmax(teacher/T), softmax(student/T)) + (1 − w) · CE(student, label)`.
    pub fn distill_loss(
        &mut self,
        student: Var,
        teacher: &Tensor,
        labels: &[usize],
        temperature: f64,
        soft_weight: f64,
    ) -> Result<Var> {
        let (rows, c) = row_dims(self.shape(student), "distill_loss")?;
        if teacher.len() != rows * c {
            return Err(Error::shape("distill_loss: teacher and student logits differ in size"));
        }
        if temperature <= 0.0 || !temperature.is_finite() {
            return Err(Error::config(format!("distillation temperature {temperature} must be positive")));
        }
        check_labels(labels, rows, c)?;
        let t = temperature;
        let scaled = |v: &[f64]| v.iter().map(|x| x / t).collect::<Vec<_>>();
        let p = kernels::softmax_rows(&scaled(teacher.data()), c);
        let log_q = kernels::log_softmax_rows(&scaled(self.data(student)), c);
        let log_s = kernels::log_softmax_rows(self.data(student), c);
        let mut loss = 0.0;
        for r in 0..rows {
            let soft: f64 = -(0..c).map(|i| p[r * c + i] * log_q[r * c + i]).sum::<f64>() * t * t;
            let hard = -log_s[r * c + labels[r]];
            loss += soft_weight * soft + (1.0 - soft_weight) * hard;
        }
        loss /= rows as f64;
        let labels = labels.to_vec();
        Ok(self.push(Tensor::scalar(loss), &[student], || {
            Box::new(move |g| {
                let scale = g[0] / rows as f64;
                let mut d = vec![0.0; rows * c];
                for r in 0..rows {
                    for i in 0..c {
                        let k = r * c + i;
                        let onehot = if labels[r] == i { 1.0 } else { 0.0 };
                        let soft = t * (log_q[k].exp() - p[k]);
                        let hard = log_s[k].exp() - onehot;
                        d[k] = scale * (soft_weight * soft + (1.0 - soft_weight) * hard);
                    }
                }
                vec![d]
            })
        }))
    }
}

fn check_labels(labels: &[usize], rows: usize, c: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::data(format!("label {l} out of range for {c} classes")));
    }
    Ok(())
}
