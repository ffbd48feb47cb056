//! Diagonal-covariance Gaussian mixtures fitted by EM, one per class.

use std::io::{Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vote::majority_vote;
use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;
/// EM stops when the mean per-frame log-likelihood improves by less than this.
pub const CONVERGENCE_TOL: f64 = 1e-6;
pub const GMM_MAGIC: &[u8; 4] = b"SWGM";
pub const GMM_VERSION: u32 = 1;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    dim: usize,
    weights: Vec<f64>,
    /// `[K, D]` row-major.
    means: Vec<f64>,
    variances: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn new(dim: usize, weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if dim == 0 || k == 0 || means.len() != k * dim || variances.len() != k * dim {
            return Err(Error::shape(format!(
                "mixture of {k} components in {dim} dimensions needs {} means and variances",
                k * dim
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("mixture weights must lie on the simplex"));
        }
        if variances.iter().any(|&v| !(v > 0.0)) || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::config("variances must be positive and means finite"));
        }
        Ok(Self {
            dim,
            weights,
            means,
            variances,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    /// `ln N(x; μ_k, diag σ²_k)`.
    pub fn component_log_density(&self, x: &[f64], k: usize) -> f64 {
        let (mu, var) = (self.mean(k), self.variance(k));
        let mut s = 0.0;
        for ((&x, &m), &v) in x.iter().zip(mu).zip(var) {
            s += (x - m) * (x - m) / v + v.ln();
        }
        -0.5 * (s + self.dim as f64 * LN_2PI)
    }

    fn weighted_log_densities(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.weights[k].ln() + self.component_log_density(x, k);
        }
    }

    /// `ln Σ_k π_k N(x; μ_k, σ²_k)`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.n_components()];
        self.weighted_log_densities(x, &mut buf);
        log_sum_exp(&buf)
    }

    /// Total log-likelihood of row-major `frames`.
    pub fn log_likelihood(&self, frames: &[f64]) -> f64 {
        frames.chunks_exact(self.dim).map(|x| self.log_density(x)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub components: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            components: 8,
            max_iters: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean per-frame log-likelihood before each M-step and of the returned model.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// EM from k-means means, the global variance and uniform weights.
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding from the frames, then a few Lloyd passes.
fn kmeans_init(frames: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = frames.len() / dim;
    let row = |i: usize| &frames[i * dim..(i + 1) * dim];
    let mut means = row(rng.random_range(0..n)).to_vec();
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &means)).collect();
    while means.len() < k * dim {
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every frame already coincides with a centre
            Err(_) => rng.random_range(0..n),
        };
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        means.extend_from_slice(&c);
    }
    let mut assign = vec![0usize; n];
    for _ in 0..10 {
        let mut moved = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let best = (0..k)
                .min_by(|&p, &q| {
                    let dp = sq_dist(row(i), &means[p * dim..(p + 1) * dim]);
                    let dq = sq_dist(row(i), &means[q * dim..(q + 1) * dim]);
                    dp.total_cmp(&dq)
                })
                .unwrap();
            moved |= *a != best;
            *a = best;
        }
        let mut sum = vec![0.0; k * dim];
        let mut count = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            count[a] += 1;
            sum[a * dim..(a + 1) * dim].iter_mut().zip(row(i)).for_each(|(s, x)| *s += x);
        }
        for j in 0..k {
            if count[j] > 0 {
                for d in 0..dim {
                    means[j * dim + d] = sum[j * dim + d] / count[j] as f64;
                }
            }
        }
        if !moved {
            break;
        }
    }
    means
}

pub fn gmm_fit(frames: &[f64], dim: usize, opts: GmmOptions) -> Result<GmmFit> {
    if dim == 0 || frames.len() % dim != 0 {
        return Err(Error::shape(format!("{} values are not rows of {dim}", frames.len())));
    }
    let n = frames.len() / dim;
    let k = opts.components;
    if k == 0 || k > n {
        return Err(Error::config(format!("{k} components for {n} frames")));
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite feature value"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut global_mean = vec![0.0; dim];
    for x in frames.chunks_exact(dim) {
        global_mean.iter_mut().zip(x).for_each(|(m, &x)| *m += x / n as f64);
    }
    let mut global_var = vec![0.0; dim];
    for x in frames.chunks_exact(dim) {
        global_var
            .iter_mut()
            .zip(x.iter().zip(&global_mean))
            .for_each(|(v, (&x, &m))| *v += (x - m) * (x - m) / n as f64);
    }
    global_var.iter_mut().for_each(|v| *v = v.max(VARIANCE_FLOOR));
    let means = kmeans_init(frames, dim, k, &mut rng);
    let mut model = GmmModel {
        dim,
        weights: vec![1.0 / k as f64; k],
        means,
        variances: global_var.repeat(k),
    };

    let mut history = Vec::new();
    let mut resp = vec![0.0; n * k];
    let mut converged = false;
    for iter in 0..=opts.max_iters {
        // E-step
        let mut ll = 0.0;
        for (x, r) in frames.chunks_exact(dim).zip(resp.chunks_exact_mut(k)) {
            model.weighted_log_densities(x, r);
            let lse = log_sum_exp(r);
            ll += lse;
            r.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let ll = ll / n as f64;
        if let Some(&prev) = history.last() {
            if ll - prev < CONVERGENCE_TOL {
                history.push(ll);
                converged = true;
                break;
            }
        }
        history.push(ll);
        if iter == opts.max_iters {
            break;
        }
        // M-step
        let mut nk = vec![0.0; k];
        let mut sum = vec![0.0; k * dim];
        let mut sq = vec![0.0; k * dim];
        for (x, r) in frames.chunks_exact(dim).zip(resp.chunks_exact(k)) {
            for (j, &rj) in r.iter().enumerate() {
                nk[j] += rj;
                for d in 0..dim {
                    sum[j * dim + d] += rj * x[d];
                }
            }
        }
        for j in 0..k {
            if nk[j] > 0.0 {
                for d in 0..dim {
                    model.means[j * dim + d] = sum[j * dim + d] / nk[j];
                }
            }
        }
        for (x, r) in frames.chunks_exact(dim).zip(resp.chunks_exact(k)) {
            for (j, &rj) in r.iter().enumerate() {
                for d in 0..dim {
                    let e = x[d] - model.means[j * dim + d];
                    sq[j * dim + d] += rj * e * e;
                }
            }
        }
        for j in 0..k {
            model.weights[j] = nk[j] / n as f64;
            if nk[j] > 0.0 {
                for d in 0..dim {
                    model.variances[j * dim + d] = (sq[j * dim + d] / nk[j]).max(VARIANCE_FLOOR);
                }
            }
        }
    }
    Ok(GmmFit {
        model,
        history,
        converged,
    })
}

/// Clip decision with the per-frame evidence behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmDecision {
    pub class: usize,
    /// `[frames, classes]` log-likelihoods.
    pub frame_log_likelihoods: Vec<f64>,
    pub votes: Vec<usize>,
}

/// One mixture per class.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmClassifier {
    pub models: Vec<GmmModel>,
}

impl GmmClassifier {
    /// Fits one mixture per class on that class's frames.
    pub fn fit(class_frames: &[Vec<f64>], dim: usize, opts: GmmOptions) -> Result<Self> {
        let models = class_frames
            .iter()
            .enumerate()
            .map(|(c, f)| {
                gmm_fit(
                    f,
                    dim,
                    GmmOptions {
                        seed: opts.seed.wrapping_add(c as u64),
                        ..opts
                    },
                )
                .map(|fit| fit.model)
            })
            .collect::<Result<_>>()?;
        Ok(Self { models })
    }

    pub fn n_classes(&self) -> usize {
        self.models.len()
    }

    pub fn dim(&self) -> usize {
        self.models.first().map_or(0, GmmModel::dim)
    }

    /// Each frame votes for its most likely class; plurality wins, ties by summed log-likelihood.
    pub fn classify(&self, frames: &[f64]) -> Result<GmmDecision> {
        let dim = self.dim();
        if frames.is_empty() || frames.len() % dim != 0 {
            return Err(Error::shape(format!("{} values are not rows of {dim}", frames.len())));
        }
        let c = self.n_classes();
        let mut lls = Vec::with_capacity(frames.len() / dim * c);
        let mut votes = Vec::with_capacity(frames.len() / dim);
        let mut totals = vec![0.0; c];
        for x in frames.chunks_exact(dim) {
            let row: Vec<f64> = self.models.iter().map(|m| m.log_density(x)).collect();
            let best = (0..c).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            votes.push(best);
            totals.iter_mut().zip(&row).for_each(|(t, v)| *t += v);
            lls.extend(row);
        }
        Ok(GmmDecision {
            class: majority_vote(&votes, &totals),
            frame_log_likelihoods: lls,
            votes,
        })
    }

    /// `"SWGM"`, u32 version, u32 classes, then per class u32 K, u32 D and
    /// little-endian f64 weights, means and variances.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(GMM_MAGIC)?;
        w.write_all(&GMM_VERSION.to_le_bytes())?;
        w.write_all(&(self.models.len() as u32).to_le_bytes())?;
        for m in &self.models {
            w.write_all(&(m.n_components() as u32).to_le_bytes())?;
            w.write_all(&(m.dim as u32).to_le_bytes())?;
            for v in m.weights.iter().chain(&m.means).chain(&m.variances) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        fn exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
            r.read_exact(buf).map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => Error::format("truncated mixture file"),
                _ => Error::Io(e),
            })
        }
        fn u32_of<R: Read>(r: &mut R) -> Result<usize> {
            let mut b = [0u8; 4];
            exact(r, &mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        }
        let mut magic = [0u8; 4];
        exact(&mut r, &mut magic)?;
        if &magic != GMM_MAGIC {
            return Err(Error::format("bad mixture file magic"));
        }
        if u32_of(&mut r)? != GMM_VERSION as usize {
            return Err(Error::format("unsupported mixture file version"));
        }
        let classes = u32_of(&mut r)?;
        let mut models = Vec::new();
        for _ in 0..classes.min(64) {
            let k = u32_of(&mut r)?;
            let d = u32_of(&mut r)?;
            if k.saturating_mul(d) > 1 << 24 {
                return Err(Error::format("mixture dimensions are implausibly large"));
            }
            let mut raw = vec![0u8; (k + 2 * k * d) * 8];
            exact(&mut r, &mut raw)?;
            let vals: Vec<f64> = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let (w, rest) = vals.split_at(k);
            let (mu, var) = rest.split_at(k * d);
            models.push(GmmModel::new(d, w.to_vec(), mu.to_vec(), var.to_vec()).map_err(|e| Error::format(e.to_string()))?);
        }
        if models.len() != classes || classes == 0 {
            return Err(Error::format(format!("mixture file declares {classes} classes")));
        }
        if models.iter().any(|m| m.dim != models[0].dim) {
            return Err(Error::format("class mixtures differ in dimension"));
        }
        Ok(Self { models })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(&std::fs::read(path)?[..])
    }
}
