//! Dataset preparation, optimization and the training loop.

mod dataset;
mod distill;
mod optim;
mod trainer;

pub use dataset::{
    clip_id, make_clips, split_counts, split_dataset, DatasetManifest, ManifestRecord, Split, TeacherLogits,
    MIN_FILES_PER_CLASS, SPLIT_FRACTIONS,
};
pub use distill::{distill_terms, soft_gradient, DistillTerms, DEFAULT_SOFT_WEIGHT};
pub use optim::{adam_step, sgdr_lr, AdamState, Sgdr, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use trainer::{
    evaluate, scaled_batch_size, train, ClipSet, DistillConfig, EpochRecord, TrainConfig, TrainOutcome,
    DEFAULT_BATCH_AT_1S,
};
