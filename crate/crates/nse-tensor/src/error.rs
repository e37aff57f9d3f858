// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

/// Errors raised by the dense matrix kernel.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    /// Operand shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    /// Backing buffer length does not equal `rows * cols`.
    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength {
        rows: usize,
        cols: usize,
        len: usize,
    },

    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },

    /// Asymmetry `‖A − Aᵀ‖_F` exceeded the tolerance.
    #[error("matrix is not symmetric: asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix contains NaN or infinite entries")]
    NonFinite,

    /// Cholesky pivot `pivot` at `index` fell below `threshold`.
    #[error("matrix is not positive definite: pivot {pivot:e} at {index} below {threshold:e}")]
    NotPositiveDefinite {
        index: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("matrix is singular at pivot {index}")]
    Singular { index: usize },

    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
}

/// Result alias for this crate.
pub type Result<T> = std::result::Result<T, TensorError>;
