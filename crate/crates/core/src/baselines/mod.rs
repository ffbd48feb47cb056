//! Frame-wise reference classifiers: per-class Gaussian mixtures and a
//! self-normalizing feed-forward network.

mod gmm;
mod snn;
mod vote;

pub use gmm::{
    gmm_fit, GmmClassifier, GmmDecision, GmmFit, GmmModel, GmmOptions, CONVERGENCE_TOL, GMM_MAGIC, GMM_VERSION,
    VARIANCE_FLOOR,
};
pub use snn::{build_snn, snn_loss, snn_param_count, train_snn, Snn, SnnTrainConfig, SNN_DROPOUT, SNN_WIDTHS};
pub use vote::majority_vote;
