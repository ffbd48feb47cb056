//! The training loop: shuffled minibatches, Adam under a warm-restart
//! schedule, optional distillation and best-checkpoint selection.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{clip_id, make_clips, DatasetManifest, Split, TeacherLogits};
use super::distill::DEFAULT_SOFT_WEIGHT;
use super::optim::{adam_step, AdamState, Sgdr};
use crate::audio::load_wav;
use crate::autodiff::kernels::log_softmax_rows;
use crate::autodiff::{Tape, Tensor};
use crate::dsp::{FeatureExtractor, FeatureMatrix};
use crate::error::{Error, Result};
use crate::model::{argmax, Ablation, Model};

/// Batch size used for 1-second clips; other lengths scale inversely.
pub const DEFAULT_BATCH_AT_1S: usize = 32;

/// Labelled feature matrices for one split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClipSet {
    pub features: Vec<FeatureMatrix>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

impl ClipSet {
    pub fn push(&mut self, id: impl Into<String>, features: FeatureMatrix, label: usize) {
        self.ids.push(id.into());
        self.features.push(features);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Loads, preprocesses and slices every file of `split`.
    pub fn from_manifest(
        manifest: &DatasetManifest,
        split: Split,
        clip_len_s: f64,
        extractor: &FeatureExtractor,
    ) -> Result<Self> {
        let mut set = Self::default();
        for rec in manifest.files(split) {
            let audio = extractor.preprocess(&load_wav(&rec.path)?);
            for (i, clip) in make_clips(&audio, clip_len_s).iter().enumerate() {
                set.push(clip_id(&rec.path, i), extractor.features_of(clip)?, rec.class.index());
            }
        }
        Ok(set)
    }

    fn frame_shape(&self) -> Result<(usize, usize)> {
        let first = self.features.first().ok_or_else(|| Error::data("empty clip set"))?;
        let shape = (first.n_frames(), first.n_coeffs());
        if let Some(f) = self.features.iter().find(|f| (f.n_frames(), f.n_coeffs()) != shape) {
            return Err(Error::data(format!(
                "clips differ in shape: {}×{} vs {}×{}",
                shape.0,
                shape.1,
                f.n_frames(),
                f.n_coeffs()
            )));
        }
        Ok(shape)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub temperature: f64,
    pub soft_weight: f64,
}

impl DistillConfig {
    pub fn new(temperature: f64) -> Self {
        Self {
            temperature,
            soft_weight: DEFAULT_SOFT_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub clip_len_s: f64,
    pub epochs: usize,
    pub schedule: Sgdr,
    /// Batch size at 1 s clips; see [`scaled_batch_size`].
    pub batch_at_1s: usize,
    pub distill: Option<DistillConfig>,
    pub seed: u64,
    /// Stop once evaluation-mode training accuracy reaches this.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip_len_s: 1.0,
            epochs: 120,
            schedule: Sgdr::default(),
            batch_at_1s: DEFAULT_BATCH_AT_1S,
            distill: None,
            seed: 0,
            target_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        scaled_batch_size(self.batch_at_1s, self.clip_len_s)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.clip_len_s > 0.0) || self.batch_at_1s == 0 {
            return Err(Error::config("clip length and batch size must be positive"));
        }
        if let Some(d) = self.distill {
            if !(d.temperature > 0.0) || !(0.0..=1.0).contains(&d.soft_weight) {
                return Err(Error::config("distillation needs T > 0 and a soft weight in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Shorter clips give proportionally more samples per epoch, so the batch
/// grows by the same factor to keep the number of updates per epoch fixed.
pub fn scaled_batch_size(batch_at_1s: usize, clip_len_s: f64) -> usize {
    ((batch_at_1s as f64 / clip_len_s).round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
    /// Mean minibatch loss while training (dropout active).
    pub batch_loss: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={}\tlr={:.6e}\tbatch_loss={:.6}\ttrain_loss={:.6}\ttrain_acc={:.4}",
            self.epoch, self.lr, self.batch_loss, self.train_loss, self.train_acc
        )?;
        if let (Some(l), Some(a)) = (self.val_loss, self.val_acc) {
            write!(f, "\tval_loss={l:.6}\tval_acc={a:.4}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best epoch, rounded to `f32`.
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Mean cross-entropy and accuracy in inference mode.
pub fn evaluate(model: &Model, set: &ClipSet) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::data("cannot evaluate on an empty clip set"));
    }
    let c = model.n_classes();
    let (mut loss, mut correct) = (0.0, 0);
    for (f, &label) in set.features.iter().zip(&set.labels) {
        let logits = model.logits(f)?;
        loss -= log_softmax_rows(&logits, c)[label];
        correct += usize::from(argmax(&logits) == label);
    }
    Ok((loss / set.len() as f64, correct as f64 / set.len() as f64))
}

pub fn train(
    mut model: Model,
    train_set: &ClipSet,
    val_set: Option<&ClipSet>,
    config: &TrainConfig,
    teacher: Option<&TeacherLogits>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (t, c) = train_set.frame_shape()?;
    let n_classes = model.n_classes();
    if let Some(&l) = train_set.labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::data(format!("label {l} out of range for {n_classes} classes")));
    }
    let teacher_rows: Option<Vec<&[f64]>> = match (config.distill, teacher) {
        (Some(_), Some(tl)) => Some(
            train_set
                .ids
                .iter()
                .map(|id| {
                    tl.get(id)
                        .filter(|l| l.len() == n_classes)
                        .ok_or_else(|| Error::data(format!("no teacher logits for clip `{id}`")))
                })
                .collect::<Result<_>>()?,
        ),
        (Some(_), None) => return Err(Error::data("distillation requested without teacher logits")),
        (None, _) => None,
    };
    let val_set = val_set.filter(|v| !v.is_empty());

    let names: Vec<String> = model.params().names().map(String::from).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut adam = AdamState::for_params(model.params().iter().map(|(_, t)| t));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batch = config.batch_size().min(train_set.len());
    let n_batches = train_set.len().div_ceil(batch);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, idx) in order.chunks(batch).enumerate() {
            let lr = config.schedule.lr(epoch as f64 + bi as f64 / n_batches as f64);
            let mut data = Vec::with_capacity(idx.len() * t * c);
            for &i in idx {
                data.extend_from_slice(train_set.features[i].values());
            }
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let mut tape = Tape::new();
            let vars = model.params().record(&mut tape);
            let x = tape.constant(Tensor::from_raw(vec![idx.len(), t, c], data));
            let trace = model.forward_tape(&mut tape, &vars, x, true, &mut rng, Ablation::default())?;
            let loss = match (&teacher_rows, config.distill) {
                (Some(rows), Some(d)) => {
                    let tdata: Vec<f64> = idx.iter().flat_map(|&i| rows[i].iter().copied()).collect();
                    let teacher = Tensor::from_raw(vec![idx.len(), n_classes], tdata);
                    tape.distill_loss(trace.logits, &teacher, &labels, d.temperature, d.soft_weight)?
                }
                _ => tape.cross_entropy(trace.logits, &labels)?,
            };
            loss_sum += tape.value(loss).item() * idx.len() as f64;
            let grads = tape.backward(loss);
            let g: Vec<Vec<f64>> = vars
                .iter()
                .zip(model.params().iter())
                .map(|(&v, (_, p))| grads.get_or_zeros(v, p.len()))
                .collect();
            let g: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
            adam_step(&mut adam, &mut model.params_mut().slices_mut(), &g, &names, lr)?;
        }
        let (train_loss, train_acc) = evaluate(&model, train_set)?;
        let val = val_set.map(|v| evaluate(&model, v)).transpose()?;
        let record = EpochRecord {
            epoch: epoch + 1,
            lr: config.schedule.lr(epoch as f64),
            batch_loss: loss_sum / train_set.len() as f64,
            train_loss,
            train_acc,
            val_loss: val.map(|v| v.0),
            val_acc: val.map(|v| v.1),
        };
        log.push(record);
        let score = val.map_or(train_loss, |v| v.0);
        if !score.is_finite() {
            return Err(Error::Training {
                param: "loss".into(),
                reason: format!("non-finite loss at epoch {}", epoch + 1),
            });
        }
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, epoch + 1, model.clone()));
        }
        if config.target_train_accuracy.is_some_and(|a| train_acc >= a) {
            if val.is_none() {
                // without a validation set the stopping epoch is the checkpoint
                best = Some((score, epoch + 1, model.clone()));
            }
            break;
        }
    }
    let (_, best_epoch, mut model) = best.ok_or_else(|| Error::config("training needs at least one epoch"))?;
    model.params_mut().snap_to_f32();
    model.metadata.retain(|(k, _)| k != "epochs" && k != "best_epoch" && k != "train_seed");
    model.metadata.extend([
        ("epochs".to_string(), log.len().to_string()),
        ("best_epoch".to_string(), best_epoch.to_string()),
        ("train_seed".to_string(), config.seed.to_string()),
    ]);
    Ok(TrainOutcome { model, log, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FeatureKind;
    use crate::model::{LayerKind, LayerSpec, ModelConfig};
    use rand::Rng;

    fn toy_set(n: usize, t: usize, seed: u64) -> ClipSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ClipSet::default();
        for i in 0..n {
            let label = i % 3;
            let v = (0..t * 4)
                .map(|j| if j % 4 == label { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3))
                .collect();
            set.push(format!("toy:{i}"), FeatureMatrix::new(v, t, 4, 25.0, 10.0, FeatureKind::Mfcc).unwrap(), label);
        }
        set
    }

    fn small_model() -> Model {
        let cfg = ModelConfig {
            name: "small".into(),
            input_channels: 4,
            n_classes: 3,
            width_multiplier: 1,
            dropout_rate: None,
            layers: vec![
                LayerSpec::new(LayerKind::GatedConvBlock, 4, 3, 1),
                LayerSpec::new(LayerKind::StridedGatedConv, 4, 3, 2),
                LayerSpec::new(LayerKind::Head, 0, 1, 1),
            ],
        };
        Model::build(&cfg, 1).unwrap()
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_at_1s: 6,
            schedule: Sgdr {
                base_lr: 1e-2,
                ..Sgdr::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batch_scaling_rule() {
        assert_eq!(scaled_batch_size(32, 1.0), 32);
        assert_eq!(scaled_batch_size(32, 0.5), 64);
        assert_eq!(scaled_batch_size(32, 2.0), 16);
        assert_eq!(scaled_batch_size(32, 0.25), 2 * scaled_batch_size(32, 0.5));
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        let out = train(small_model(), &toy_set(30, 10, 1), Some(&toy_set(9, 10, 2)), &config(30), None).unwrap();
        assert_eq!(out.log.len(), 30);
        assert!(out.log[0].batch_loss < 3f64.ln() + 0.1);
        assert!(out.log.last().unwrap().train_acc > 0.9);
        let best = out.log[out.best_epoch - 1].val_loss.unwrap();
        assert!(out.log.iter().all(|r| r.val_loss.unwrap() >= best));
    }

    #[test]
    fn training_is_reproducible() {
        let a = train(small_model(), &toy_set(12, 10, 1), None, &config(3), None).unwrap();
        let b = train(small_model(), &toy_set(12, 10, 1), None, &config(3), None).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn missing_teacher_logits_is_a_data_error() {
        let set = toy_set(6, 10, 1);
        let mut cfg = config(1);
        cfg.distill = Some(DistillConfig::new(2.0));
        let mut teacher = TeacherLogits::default();
        for id in &set.ids[..5] {
            teacher.insert(id.clone(), vec![0.0, 0.0, 0.0]);
        }
        let err = train(small_model(), &set, None, &cfg, Some(&teacher)).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("toy:5")));
        assert!(matches!(train(small_model(), &set, None, &cfg, None), Err(Error::Data(_))));
        teacher.insert("toy:5", vec![1.0, 0.0, -1.0]);
        assert!(train(small_model(), &set, None, &cfg, Some(&teacher)).is_ok());
    }

    #[test]
    fn log_lines_are_key_value() {
        let out = train(small_model(), &toy_set(6, 10, 1), Some(&toy_set(3, 10, 3)), &config(1), None).unwrap();
        let line = out.log[0].to_string();
        assert!(line.starts_with("epoch=1\tlr="));
        assert!(line.contains("\tval_acc="));
    }
}
