//! Frame-wise self-normalizing feed-forward network: dense layers with SELU
//! and alpha dropout.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::vote::majority_vote;
use crate::autodiff::kernels::{self, log_softmax_rows, softmax_rows};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{argmax, ParamSet};
use crate::train::{adam_step, AdamState};

/// Hidden widths giving 179,203 parameters for 60 inputs and 3 classes.
pub const SNN_WIDTHS: [usize; 4] = [256, 256, 240, 148];
pub const SNN_DROPOUT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct Snn {
    pub widths: Vec<usize>,
    pub d_in: usize,
    pub n_classes: usize,
    pub dropout_rate: f64,
    params: ParamSet,
    /// Per-dimension input standardization, fixed from the training frames.
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
}

/// LeCun-normal weights (std `1/√fan_in`), zero biases.
pub fn build_snn(widths: &[usize], d_in: usize, n_classes: usize, dropout_rate: f64, seed: u64) -> Result<Snn> {
    if d_in == 0 || n_classes < 2 || widths.contains(&0) {
        return Err(Error::config("network sizes must be positive"));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::config(format!("dropout rate {dropout_rate} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let mut fan_in = d_in;
    for (i, &w) in widths.iter().chain(std::iter::once(&n_classes)).enumerate() {
        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
        params.push(format!("dense{i}.w"), Tensor::from_fn([fan_in, w], |_| normal.sample(&mut rng)));
        params.push(format!("dense{i}.b"), Tensor::zeros([w]));
        fan_in = w;
    }
    Ok(Snn {
        widths: widths.to_vec(),
        d_in,
        n_classes,
        dropout_rate,
        params,
        input_mean: vec![0.0; d_in],
        input_scale: vec![1.0; d_in],
    })
}

/// `Σ (fan_in + 1) · fan_out` over the layers.
pub fn snn_param_count(widths: &[usize], d_in: usize, n_classes: usize) -> usize {
    let mut fan_in = d_in;
    let mut total = 0;
    for &w in widths.iter().chain(std::iter::once(&n_classes)) {
        total += (fan_in + 1) * w;
        fan_in = w;
    }
    total
}

impl Snn {
    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.n_scalars()
    }

    fn standardize(&self, frames: &[f64]) -> Vec<f64> {
        frames
            .chunks_exact(self.d_in)
            .flat_map(|x| {
                x.iter()
                    .zip(&self.input_mean)
                    .zip(&self.input_scale)
                    .map(|((x, m), s)| (x - m) * s)
            })
            .collect()
    }

    /// Logits for `x: [N, D_in]` (already standardized).
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let mut h = x;
        let n_layers = params.len() / 2;
        for i in 0..n_layers {
            h = tape.dense(h, params[2 * i], params[2 * i + 1])?;
            if i + 1 < n_layers {
                h = tape.selu(h);
                h = tape.alpha_dropout(h, self.dropout_rate, training, rng)?;
            }
        }
        Ok(h)
    }

    /// Per-frame class probabilities, `[N, n_classes]`, for raw feature rows.
    pub fn frame_probabilities(&self, frames: &[f64]) -> Result<Vec<f64>> {
        if frames.len() % self.d_in != 0 {
            return Err(Error::shape(format!("{} values are not rows of {}", frames.len(), self.d_in)));
        }
        Ok(softmax_rows(&self.frame_logits(&self.standardize(frames)), self.n_classes))
    }

    fn frame_logits(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut d = self.d_in;
        let n_layers = self.params.len() / 2;
        for i in 0..n_layers {
            let w = self.params.tensor(2 * i);
            let out = w.shape()[1];
            h = kernels::dense(&h, w.data(), self.params.tensor(2 * i + 1).data(), d, out);
            if i + 1 < n_layers {
                h.iter_mut().for_each(|v| *v = kernels::selu(*v));
            }
            d = out;
        }
        h
    }

    /// Clip decision from the mean of per-frame probabilities.
    pub fn classify_mean(&self, frames: &[f64]) -> Result<usize> {
        let p = self.frame_probabilities(frames)?;
        let mut mean = vec![0.0; self.n_classes];
        for row in p.chunks_exact(self.n_classes) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        Ok(argmax(&mean))
    }

    /// Clip decision by plurality of per-frame argmax labels.
    pub fn classify_majority(&self, frames: &[f64]) -> Result<usize> {
        let p = self.frame_probabilities(frames)?;
        let votes: Vec<usize> = p.chunks_exact(self.n_classes).map(argmax).collect();
        let mut totals = vec![0.0; self.n_classes];
        for row in p.chunks_exact(self.n_classes) {
            totals.iter_mut().zip(row).for_each(|(t, v)| *t += v);
        }
        Ok(majority_vote(&votes, &totals))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnnTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: usize,
    pub seed: u64,
}

impl Default for SnnTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            lr: 1e-3,
            patience: 5,
            seed: 0,
        }
    }
}

/// Mean cross-entropy of raw feature rows.
pub fn snn_loss(snn: &Snn, frames: &[f64], labels: &[usize]) -> f64 {
    let logits = snn.frame_logits(&snn.standardize(frames));
    let lp = log_softmax_rows(&logits, snn.n_classes);
    -labels.iter().enumerate().map(|(r, &l)| lp[r * snn.n_classes + l]).sum::<f64>() / labels.len() as f64
}

/// Frame-wise training with Adam until the validation loss stops improving.
/// Returns the best network and per-epoch `(train, validation)` losses.
pub fn train_snn(
    mut snn: Snn,
    frames: &[f64],
    labels: &[usize],
    val: Option<(&[f64], &[usize])>,
    cfg: SnnTrainConfig,
) -> Result<(Snn, Vec<(f64, Option<f64>)>)> {
    let d = snn.d_in;
    if frames.len() != labels.len() * d || labels.is_empty() {
        return Err(Error::shape(format!("{} labels for {} values of width {d}", labels.len(), frames.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= snn.n_classes) {
        return Err(Error::data(format!("label {l} out of range")));
    }
    let n = labels.len();
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for x in frames.chunks_exact(d) {
        mean.iter_mut().zip(x).for_each(|(m, x)| *m += x / n as f64);
    }
    for x in frames.chunks_exact(d) {
        var.iter_mut().zip(x.iter().zip(&mean)).for_each(|(v, (x, m))| *v += (x - m).powi(2) / n as f64);
    }
    snn.input_mean = mean;
    snn.input_scale = var.iter().map(|v| 1.0 / v.sqrt().max(1e-6)).collect();
    let x_all = snn.standardize(frames);

    let names: Vec<String> = snn.params.names().map(String::from).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut adam = AdamState::for_params(snn.params.iter().map(|(_, t)| t));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, Snn)> = None;
    let mut since_best = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size.max(1)) {
            let data: Vec<f64> = idx.iter().flat_map(|&i| x_all[i * d..(i + 1) * d].iter().copied()).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let vars = snn.params.record(&mut tape);
            let x = tape.constant(Tensor::from_raw(vec![idx.len(), d], data));
            let logits = snn.forward_tape(&mut tape, &vars, x, true, &mut rng)?;
            let loss = tape.cross_entropy(logits, &y)?;
            let grads = tape.backward(loss);
            let g: Vec<Vec<f64>> = vars
                .iter()
                .zip(snn.params.iter())
                .map(|(&v, (_, p))| grads.get_or_zeros(v, p.len()))
                .collect();
            let g: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
            adam_step(&mut adam, &mut snn.params.slices_mut(), &g, &names, cfg.lr)?;
        }
        let train_loss = snn_loss(&snn, frames, labels);
        let val_loss = val.filter(|v| !v.1.is_empty()).map(|(f, l)| snn_loss(&snn, f, l));
        history.push((train_loss, val_loss));
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, snn.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (_, best) = best.ok_or_else(|| Error::config("training needs at least one epoch"))?;
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use rand::Rng;

    #[test]
    fn reference_widths_give_reference_size() {
        assert_eq!(snn_param_count(&SNN_WIDTHS, 60, 3), 179_203);
        let snn = build_snn(&SNN_WIDTHS, 60, 3, SNN_DROPOUT, 0).unwrap();
        assert_eq!(snn.param_count(), 179_203);
    }

    #[test]
    fn zero_input_through_zero_biases_stays_zero() {
        let snn = build_snn(&[8, 8], 4, 3, 0.0, 1).unwrap();
        assert!(snn.frame_logits(&[0.0; 4]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn end_to_end_gradient_check() {
        let snn = build_snn(&[5, 4, 4, 3], 6, 3, 0.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut inputs: Vec<Tensor> = snn.params().iter().map(|(_, t)| t.clone()).collect();
        for t in &mut inputs {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        }
        inputs.push(Tensor::from_fn([4, 6], |_| rng.random_range(-1.5..1.5)));
        let report = finite_diff_check(
            |tape, vars| {
                let (x, p) = vars.split_last().unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let logits = snn.forward_tape(tape, p, *x, false, &mut rng)?;
                tape.cross_entropy(logits, &[0, 2, 1, 1])
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn learns_separable_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut frames = Vec::new();
        let mut labels = Vec::new();
        for i in 0..300 {
            let c = i % 3;
            labels.push(c);
            frames.extend((0..4).map(|d| if d == c { 10.0 } else { 0.0 } + rng.random_range(-2.0..2.0)));
        }
        let snn = build_snn(&[16, 16], 4, 3, 0.05, 0).unwrap();
        let cfg = SnnTrainConfig {
            epochs: 30,
            batch_size: 32,
            lr: 3e-3,
            ..Default::default()
        };
        let (snn, hist) = train_snn(snn, &frames, &labels, None, cfg).unwrap();
        assert!(hist.last().unwrap().0 < hist[0].0);
        for c in 0..3 {
            let clip: Vec<f64> = (0..10).flat_map(|_| (0..4).map(move |d| if d == c { 10.0 } else { 0.0 })).collect();
            assert_eq!(snn.classify_mean(&clip).unwrap(), c);
            assert_eq!(snn.classify_majority(&clip).unwrap(), c);
        }
    }
}
