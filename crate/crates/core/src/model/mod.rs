//! The SwishNet classifier: configuration, parameters, forward passes and
//! weight files.

mod config;
mod io;
mod network;
mod params;

pub use config::{LayerKind, LayerSpec, ModelConfig, SLIM_PRESET, WIDE_PRESET};
pub use io::{load_model, read_model, save_model, write_model, WEIGHT_MAGIC, WEIGHT_VERSION};
pub use network::{
    argmax, param_count, Ablation, Activation, Architecture, BlockOp, BlockPlan, BranchPlan, Inference, Metadata,
    Model, ParamShape, SkipPlan, Trace,
};
pub use params::ParamSet;

#[cfg(test)]
mod tests;
