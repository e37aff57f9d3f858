// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed-form weight edits confined to a null space.
//!
//! Three editors share one result type:
//!
//! - [`rank_one_edit`] rewrites a single key→value association with
//!   `ΔW = ((v* − W·k*) / (k*ᵀ·P·k*)) · (P·k*)ᵀ`. The update is exact on the
//!   target key and, because its rows lie in `range(P)`, it leaves every
//!   preserved key's output untouched.
//! - [`sequential_edit`] handles a batch `(K1, V1)` while penalizing changes
//!   on the keys of earlier edits `K_prev`. It minimizes
//!   `‖(W + ΔW̃P)K1 − V1‖² + λ‖ΔW̃P‖² + ‖ΔW̃P·K_prev‖²`.
//! - [`naive_edit`] is the rank-one update with `P = I`, the unconstrained
//!   baseline.
//!
//! Edits are returned as `ΔW` and never applied in place.
//!
//! ## Sequential solve
//!
//! With `S = K_prev·K_prevᵀ + K1·K1ᵀ` and `R = V1 − W·K1` the normal
//! equations read `X·(S·P + λI) = R·K1ᵀ·P`. The matrix `S·P + λI` is not
//! symmetric, but every solution satisfies `X = X·P`, which turns the system
//! into `X·(P·S·P + λI) = R·K1ᵀ·P` with a symmetric positive definite matrix
//! whose eigenvalues are all at least `λ`. That system is solved by Cholesky
//! and the result is right-multiplied by `P` so that `ΔW = ΔW·P` holds to
//! rounding.

use nse_nullspace::NullProjector;
use nse_tensor::{frob_norm, norm2, outer, solve_spd, Matrix, TensorError};
use thiserror::Error;

/// Default degeneracy threshold on `‖P·k*‖ / ‖k*‖`.
pub const DEFAULT_TAU: f64 = 1e-6;

/// Default ridge weight on `‖ΔW̃P‖²` in the sequential objective.
pub const DEFAULT_LAMBDA_REG: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EditError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    /// The key lies (numerically) inside the preserved span.
    #[error("degenerate key: ‖P·k‖/‖k‖ = {ratio:e} is at or below tau = {tau:e}")]
    DegenerateKey { ratio: f64, tau: f64 },

    #[error("non-finite values in edit inputs")]
    NonFinite,

    #[error("{name} = {value} must be positive and finite")]
    InvalidParameter { name: &'static str, value: f64 },

    /// The regularized system failed to factor; this indicates a numerical fault.
    #[error("sequential system not positive definite: {0}")]
    NotPositiveDefinite(TensorError),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, EditError>;

/// Target association `k* → v*`.
#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    key: Vec<f64>,
    value: Vec<f64>,
}

impl EditRequest {
    /// # Errors
    ///
    /// [`EditError::NonFinite`], and [`EditError::DegenerateKey`] for a zero key.
    pub fn new(key: Vec<f64>, value: Vec<f64>) -> Result<Self> {
        if key.iter().chain(&value).any(|x| !x.is_finite()) {
            return Err(EditError::NonFinite);
        }
        if norm2(&key) == 0.0 {
            return Err(EditError::DegenerateKey {
                ratio: 0.0,
                tau: 0.0,
            });
        }
        Ok(Self { key, value })
    }

    pub fn key(&self) -> &[f64] {
        &self.key
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }
}

/// Keys of all edits applied so far, one column per key.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialEditState {
    prev_keys: Matrix,
}

impl SequentialEditState {
    pub fn new(dim: usize) -> Self {
        Self {
            prev_keys: Matrix::zeros(dim, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.prev_keys.rows()
    }

    /// `K_prev`, `d × m`.
    pub fn prev_keys(&self) -> &Matrix {
        &self.prev_keys
    }

    pub fn edit_count(&self) -> usize {
        self.prev_keys.cols()
    }
}

/// An edit and its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EditResult {
    /// `ΔW`, same shape as `W`.
    pub delta: Matrix,
    /// `‖(W + ΔW)·K − V‖_F` over the edited keys.
    pub target_residual: f64,
    /// `‖ΔW·U1‖_F / ‖ΔW‖_F`: share of the update acting on the preserved
    /// subspace. `None` for the unconstrained editor.
    pub constraint_residual: Option<f64>,
    /// `‖P·K‖_F` for the edited keys (`‖K‖_F` when unconstrained).
    pub null_component: f64,
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(EditError::DimMismatch {
            what,
            expected,
            found,
        })
    }
}

fn leakage(delta: &Matrix, proj: &NullProjector) -> Result<f64> {
    let n = frob_norm(delta);
    if n == 0.0 || proj.u_dom().cols() == 0 {
        return Ok(0.0);
    }
    Ok(frob_norm(&delta.matmul(proj.u_dom())?) / n)
}

fn vec_residual(w: &Matrix, delta: &Matrix, key: &[f64], value: &[f64]) -> Result<f64> {
    let edited = w.add(delta)?;
    let out = edited.matvec(key)?;
    let r: Vec<f64> = out.iter().zip(value).map(|(a, b)| a - b).collect();
    Ok(norm2(&r))
}

/// Rank-one null-space constrained edit.
///
/// # Errors
///
/// [`EditError::DegenerateKey`] when `‖P·k*‖ ≤ tau·‖k*‖`,
/// [`EditError::DimMismatch`], [`EditError::InvalidParameter`] for a bad `tau`.
pub fn rank_one_edit(
    w: &Matrix,
    req: &EditRequest,
    proj: &NullProjector,
    tau: f64,
) -> Result<EditResult> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(EditError::InvalidParameter {
            name: "tau",
            value: tau,
        });
    }
    check_len("key vs W columns", w.cols(), req.key.len())?;
    check_len("value vs W rows", w.rows(), req.value.len())?;
    check_len("key vs projector", proj.dim(), req.key.len())?;

    let k = &req.key;
    let pk = proj.p().matvec(k)?;
    let pk_norm = norm2(&pk);
    let k_norm = norm2(k);
    if pk_norm <= tau * k_norm {
        return Err(EditError::DegenerateKey {
            ratio: pk_norm / k_norm,
            tau,
        });
    }
    let wk = w.matvec(k)?;
    let denom: f64 = k.iter().zip(&pk).map(|(a, b)| a * b).sum();
    let coeff: Vec<f64> = req
        .value
        .iter()
        .zip(&wk)
        .map(|(v, x)| (v - x) / denom)
        .collect();
    let delta = outer(&coeff, &pk);
    Ok(EditResult {
        target_residual: vec_residual(w, &delta, k, &req.value)?,
        constraint_residual: Some(leakage(&delta, proj)?),
        null_component: pk_norm,
        delta,
    })
}

/// Unconstrained rank-one edit `ΔW = (v* − W·k*)·k*ᵀ / ‖k*‖²`.
///
/// # Errors
///
/// [`EditError::DegenerateKey`] for a zero key, [`EditError::DimMismatch`].
pub fn naive_edit(w: &Matrix, req: &EditRequest) -> Result<EditResult> {
    check_len("key vs W columns", w.cols(), req.key.len())?;
    check_len("value vs W rows", w.rows(), req.value.len())?;
    let k = &req.key;
    let kk: f64 = k.iter().map(|x| x * x).sum();
    if kk == 0.0 {
        return Err(EditError::DegenerateKey {
            ratio: 0.0,
            tau: 0.0,
        });
    }
    let wk = w.matvec(k)?;
    let coeff: Vec<f64> = req
        .value
        .iter()
        .zip(&wk)
        .map(|(v, x)| (v - x) / kk)
        .collect();
    let delta = outer(&coeff, k);
    Ok(EditResult {
        target_residual: vec_residual(w, &delta, k, &req.value)?,
        constraint_residual: None,
        null_component: kk.sqrt(),
        delta,
    })
}

/// Batched edit with the default ridge weight.
///
/// # Errors
///
/// See [`sequential_edit_with`].
pub fn sequential_edit(
    w: &Matrix,
    k1: &Matrix,
    v1: &Matrix,
    state: &SequentialEditState,
    proj: &NullProjector,
) -> Result<EditResult> {
    sequential_edit_with(w, k1, v1, state, proj, DEFAULT_LAMBDA_REG)
}

/// Batched edit penalizing drift on previously edited keys.
///
/// # Errors
///
/// [`EditError::DimMismatch`], [`EditError::InvalidParameter`] for a bad
/// `lambda_reg` or an empty batch, [`EditError::NotPositiveDefinite`] if the
/// regularized system fails to factor.
pub fn sequential_edit_with(
    w: &Matrix,
    k1: &Matrix,
    v1: &Matrix,
    state: &SequentialEditState,
    proj: &NullProjector,
    lambda_reg: f64,
) -> Result<EditResult> {
    if !(lambda_reg.is_finite() && lambda_reg > 0.0) {
        return Err(EditError::InvalidParameter {
            name: "lambda_reg",
            value: lambda_reg,
        });
    }
    let d = w.cols();
    check_len("K1 rows vs W columns", d, k1.rows())?;
    check_len("V1 rows vs W rows", w.rows(), v1.rows())?;
    check_len("V1 columns vs K1 columns", k1.cols(), v1.cols())?;
    check_len("projector vs W columns", d, proj.dim())?;
    check_len("edit ledger vs W columns", d, state.dim())?;
    if k1.cols() == 0 {
        return Err(EditError::InvalidParameter {
            name: "batch size",
            value: 0.0,
        });
    }
    if !k1.is_finite() || !v1.is_finite() {
        return Err(EditError::NonFinite);
    }

    let p = proj.p();
    let r = v1.sub(&w.matmul(k1)?)?;
    let s = state.prev_keys.gram().add(&k1.gram())?;
    let psp = p.matmul(&s)?.matmul(p)?.symmetrized()?;
    let system = psp.add(&Matrix::identity(d).scale(lambda_reg))?;
    let rhs = r.matmul(&k1.transpose())?.matmul(p)?;
    let x = solve_spd(&system, &rhs).map_err(|e| match e {
        TensorError::NotPositiveDefinite { .. } => EditError::NotPositiveDefinite(e),
        other => EditError::Tensor(other),
    })?;
    let delta = x.matmul(p)?;

    let fitted = w.add(&delta)?.matmul(k1)?;
    Ok(EditResult {
        target_residual: frob_norm(&fitted.sub(v1)?),
        constraint_residual: Some(leakage(&delta, proj)?),
        null_component: frob_norm(&p.matmul(k1)?),
        delta,
    })
}

/// Append the columns of `k1` to the ledger of edited keys.
///
/// # Errors
///
/// [`EditError::DimMismatch`].
pub fn record_edit(state: &SequentialEditState, k1: &Matrix) -> Result<SequentialEditState> {
    check_len("recorded keys vs ledger", state.dim(), k1.rows())?;
    Ok(SequentialEditState {
        prev_keys: state.prev_keys.hcat(k1)?,
    })
}
