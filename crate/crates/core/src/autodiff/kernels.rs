//! Forward kernels shared by the tape ops and the tape-free inference path.
//!
//! Activations are laid out `[batch, time, channel]`, row-major.

use num_traits::Float;

/// Output length of a 1D convolution. Causal convolutions left-pad with
/// `kernel - 1` zeros, so the output has `ceil(t / stride)` steps.
pub fn conv_out_len(t: usize, kernel: usize, stride: usize, causal: bool) -> usize {
    if causal {
        t.div_ceil(stride)
    } else if t < kernel {
        0
    } else {
        (t - kernel) / stride + 1
    }
}

/// Input position feeding output step `t` through tap `k`, if it lies inside the signal.
#[inline]
pub fn tap_index(t: usize, k: usize, kernel: usize, stride: usize, causal: bool, t_in: usize) -> Option<usize> {
    let pad = if causal { kernel - 1 } else { 0 };
    let p = (stride * t + k).checked_sub(pad)?;
    (p < t_in).then_some(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub t_in: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub causal: bool,
}

impl ConvGeom {
    pub fn t_out(&self) -> usize {
        conv_out_len(self.t_in, self.kernel, self.stride, self.causal)
    }
}

/// `y[b,t,o] = bias[o] + Σ_k Σ_c x[b, p(t,k), c] · w[k,c,o]`.
pub fn conv1d<F: Float>(x: &[F], w: &[F], bias: &[F], g: ConvGeom) -> Vec<F> {
    let t_out = g.t_out();
    let mut y = Vec::with_capacity(g.batch * t_out * g.c_out);
    for b in 0..g.batch {
        let xb = &x[b * g.t_in * g.c_in..(b + 1) * g.t_in * g.c_in];
        for t in 0..t_out {
            let start = y.len();
            y.extend_from_slice(bias);
            let row = &mut y[start..];
            for k in 0..g.kernel {
                let Some(p) = tap_index(t, k, g.kernel, g.stride, g.causal, g.t_in) else {
                    continue;
                };
                let xr = &xb[p * g.c_in..(p + 1) * g.c_in];
                let wk = &w[k * g.c_in * g.c_out..(k + 1) * g.c_in * g.c_out];
                for (c, &xv) in xr.iter().enumerate() {
                    let wr = &wk[c * g.c_out..(c + 1) * g.c_out];
                    for (o, &wv) in row.iter_mut().zip(wr) {
                        *o = *o + xv * wv;
                    }
                }
            }
        }
    }
    y
}

/// Per-channel convolution with `w[k, c]`; `c_out` is ignored.
pub fn depthwise_conv1d<F: Float>(x: &[F], w: &[F], g: ConvGeom) -> Vec<F> {
    let t_out = g.t_out();
    let c = g.c_in;
    let mut y = vec![F::zero(); g.batch * t_out * c];
    for b in 0..g.batch {
        let xb = &x[b * g.t_in * c..(b + 1) * g.t_in * c];
        for t in 0..t_out {
            let row = &mut y[(b * t_out + t) * c..(b * t_out + t + 1) * c];
            for k in 0..g.kernel {
                let Some(p) = tap_index(t, k, g.kernel, g.stride, g.causal, g.t_in) else {
                    continue;
                };
                let xr = &xb[p * c..(p + 1) * c];
                let wk = &w[k * c..(k + 1) * c];
                for ((o, &xv), &wv) in row.iter_mut().zip(xr).zip(wk) {
                    *o = *o + xv * wv;
                }
            }
        }
    }
    y
}

pub fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `tanh(a) · σ(g)` where `a` and `g` are the two channel halves of each row.
pub fn gated_halves<F: Float>(x: &[F], channels: usize) -> Vec<F> {
    let half = channels / 2;
    let mut out = Vec::with_capacity(x.len() / 2);
    for row in x.chunks_exact(channels) {
        let (a, g) = row.split_at(half);
        out.extend(a.iter().zip(g).map(|(&a, &g)| a.tanh() * sigmoid(g)));
    }
    out
}

/// Row-wise concatenation of two `[rows, ca]` and `[rows, cb]` blocks.
pub fn concat_rows<F: Float>(a: &[F], ca: usize, b: &[F], cb: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.chunks_exact(ca).zip(b.chunks_exact(cb)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}

/// Mean over the time axis of `[batch, t, c]`.
pub fn mean_over_time<F: Float>(x: &[F], batch: usize, t: usize, c: usize) -> Vec<F> {
    let scale = F::one() / F::from(t).unwrap();
    let mut out = vec![F::zero(); batch * c];
    for b in 0..batch {
        let acc = &mut out[b * c..(b + 1) * c];
        for row in x[b * t * c..(b + 1) * t * c].chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a = *a + v;
            }
        }
        acc.iter_mut().for_each(|a| *a = *a * scale);
    }
    out
}

pub fn softmax_rows<F: Float>(x: &[F], c: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(c) {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let sum = out[start..].iter().fold(F::zero(), |a, &b| a + b);
        out[start..].iter_mut().for_each(|v| *v = *v / sum);
    }
    out
}

pub fn log_softmax_rows(x: &[f64], c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(c) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    out
}

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

pub fn selu<F: Float>(x: F) -> F {
    let scale = F::from(SELU_SCALE).unwrap();
    if x > F::zero() {
        scale * x
    } else {
        scale * F::from(SELU_ALPHA).unwrap() * (x.exp() - F::one())
    }
}

/// `x · w + b` for each of the `rows` input rows.
pub fn dense<F: Float>(x: &[F], w: &[F], b: &[F], d_in: usize, d_out: usize) -> Vec<F> {
    let mut y = Vec::with_capacity(x.len() / d_in * d_out);
    for row in x.chunks_exact(d_in) {
        let start = y.len();
        y.extend_from_slice(b);
        let out = &mut y[start..];
        for (i, &xv) in row.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(&w[i * d_out..(i + 1) * d_out]) {
                *o = *o + xv * wv;
            }
        }
    }
    y
}
