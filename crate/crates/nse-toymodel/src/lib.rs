// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small seeded autoregressive planner with hooks for reading hidden
//! states and keys, planting wrong associations, and applying weight edits.

pub mod corpus;
mod model;
pub mod seed;
mod steer;

pub use model::{
    argmax, init_planner, logit_margin, softmax, Activation, Block, ForwardTrace, Intervention,
    PlannerConfig, Restore, Site, ToyPlanner, DEFAULT_SEED,
};
pub use steer::{
    apply_edit, block_output_at, collect_keys, collect_keys_all_positions, plant_any,
    plant_association, solve_target_value, Planted, TargetValue, C_MAX, DEFAULT_MARGIN,
    PLANT_ATTEMPTS, SEARCH_TOL,
};

use nse_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("layer {layer} out of range for {layers} layers")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("position {pos} out of range for prompt of length {len}")]
    PositionOutOfRange { pos: usize, len: usize },
    #[error("{what}: expected {expected:?}, found {found:?}")]
    DimMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("weights contain non-finite values")]
    NonFinite,
    #[error("token {token} not reachable with margin {margin} at layer {layer} (scale cap {cap})")]
    TargetUnreachable {
        token: usize,
        layer: usize,
        margin: f64,
        cap: f64,
    },
    #[error("planting token {token} at layer {layer} failed: {reason}")]
    PlantFailed {
        token: usize,
        layer: usize,
        reason: String,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;
