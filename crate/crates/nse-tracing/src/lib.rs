// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer localization on the toy planner.
//!
//! Three scores per layer: the indirect effect of restoring clean
//! activations into a noise-corrupted run, the cross-validated accuracy of
//! a ridge probe on the layer's hidden state, and the gradient norm of the
//! target loss with respect to the layer's `W2`. [`rank_layers`] combines
//! them.

mod case;
mod grad;
mod impact;
mod probe;
mod rank;

pub use case::{
    labeled_corpus, localize, LocalizationCase, LOCALIZATION_MARGIN, LOCALIZATION_PROMPT_LEN,
    PROBE_CLASSES,
};
pub use grad::{gradient_norm, gradient_norm_with_step, DEFAULT_FD_STEP};
pub use impact::{causal_impact, embedding_std, RestoreSite, TraceConfig};
pub use probe::{probe_accuracy, ridge_probe_cv, DEFAULT_FOLDS, MIN_PER_CLASS, PROBE_RIDGE};
pub use rank::{rank_layers, ImpactProfile, LayerScores, RankWeights};

use nse_tensor::TensorError;
use nse_toymodel::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("invalid trace config: {0}")]
    InvalidConfig(String),
    #[error("degenerate labels: {classes} classes, smallest class has {min_count} examples")]
    DegenerateLabels { classes: usize, min_count: usize },
    #[error("invalid ranking weights: {0}")]
    InvalidWeights(String),
    #[error("profile has no {0} scores")]
    MissingScores(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TraceError>;
