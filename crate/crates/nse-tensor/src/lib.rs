// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense `f64` linear algebra for the null-space editing stack.
//!
//! - [`Matrix`]: row-major storage with shape-checked arithmetic.
//! - [`sym_eig`]: symmetric eigendecomposition, eigenvalues descending.
//! - [`solve_spd`] / [`solve_general`]: right-sided solves `X · M = B`.
//!
//! Everything is a pure function of its inputs with a fixed summation
//! order, so results are bit-reproducible.

mod eig;
mod error;
mod matrix;
mod solve;

pub use eig::{sym_eig, SymEig, SYMMETRY_TOL};
pub use error::{Result, TensorError};
pub use matrix::{dot, frob_norm, norm2, outer, Matrix};
pub use solve::{solve_general, solve_spd, SPD_PIVOT_REL};
