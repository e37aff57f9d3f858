// SPDX-License-Identifier: MIT OR Apache-2.0

//! Edit quality: target exactness, leakage into preserved keys, and
//! behavioral drift on preserved prompts. Also the seeded plant-and-edit
//! scenarios and the constrained-versus-naive ablation built on them.

mod ablation;
mod report;
mod scenario;

pub use ablation::{ablation_compare, AblationPair, AblationSummary};
pub use report::{kl_divergence, verify_edit, EditReport, EditTarget, KL_CLAMP};
pub use scenario::{
    prefix_corpus, EditMode, EditScenario, ScenarioConfig, ScenarioOutcome, ScenarioPlan,
    V_STAR_ATTEMPTS,
};

use nse_editor::EditError;
use nse_nullspace::NullspaceError;
use nse_tensor::TensorError;
use nse_toymodel::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{what}: expected {expected:?}, found {found:?}")]
    DimMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Nullspace(#[from] NullspaceError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;
