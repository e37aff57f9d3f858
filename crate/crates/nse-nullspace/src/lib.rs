// SPDX-License-Identifier: MIT OR Apache-2.0

//! Null-space projectors built from preserved keys.
//!
//! A [`CovarianceAccumulator`] sums the uncentered Gram matrix
//! `Σ = K0·K0ᵀ` of preserved key columns. [`build_projector`] then splits the
//! eigenbasis of `Σ` into a dominant block `U1` and a null block `U2` and
//! returns `P = U2·U2ᵀ = I − U1·U1ᵀ`, the orthogonal projector onto the
//! directions that the preserved keys do not occupy.
//!
//! ## Cutoff
//!
//! An eigenvalue `λ` is null when `λ ≤ ε·λ_max`. The threshold is relative,
//! so rescaling every key leaves the projector unchanged. Eigenvalues that
//! sit within `1e-12·λ_max` of the threshold are kept in the dominant block,
//! which protects more of the preserved subspace rather than less. When
//! `λ_max = 0` nothing is preserved and `P = I`.
//!
//! Normalizing `Σ` by the sample count would not move the projector, so the
//! accumulator stores the raw sum.

use nse_tensor::{dot, frob_norm, norm2, sym_eig, Matrix, TensorError};
use thiserror::Error;

/// Default relative eigenvalue cutoff.
pub const DEFAULT_CUTOFF: f64 = 1e-8;

/// Width of the band around the cutoff whose eigenvalues go to the dominant block.
pub const TIE_BAND: f64 = 1e-12;

/// One in every `HOLDOUT_EVERY` key columns is held out from accumulation.
pub const HOLDOUT_EVERY: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NullspaceError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("non-finite values in input")]
    NonFinite,

    #[error("projector dimension is zero")]
    EmptyDim,

    #[error("cutoff {0} must lie strictly between 0 and 1")]
    InvalidCutoff(f64),

    #[error("probe vector is zero")]
    ZeroProbe,

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, NullspaceError>;

/// Running uncentered covariance `Σ = Σ_batches K·Kᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAccumulator {
    dim: usize,
    gram: Matrix,
    samples: usize,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            gram: Matrix::zeros(dim, dim),
            samples: 0,
        }
    }

    /// Accumulator over all columns of `keys` in one call.
    ///
    /// # Errors
    ///
    /// Same as [`CovarianceAccumulator::accumulate`].
    pub fn from_keys(keys: &Matrix) -> Result<Self> {
        let mut acc = Self::new(keys.rows());
        acc.accumulate(keys)?;
        Ok(acc)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    /// Total number of key columns ingested.
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Add `keys · keysᵀ` for a `dim × n` batch of key columns.
    ///
    /// The batch product is formed on the upper triangle and mirrored, so the
    /// running Gram stays exactly symmetric.
    ///
    /// # Errors
    ///
    /// [`NullspaceError::DimMismatch`], [`NullspaceError::NonFinite`].
    pub fn accumulate(&mut self, keys: &Matrix) -> Result<()> {
        if keys.rows() != self.dim {
            return Err(NullspaceError::DimMismatch {
                expected: self.dim,
                found: keys.rows(),
            });
        }
        if !keys.is_finite() {
            return Err(NullspaceError::NonFinite);
        }
        let batch = keys.gram();
        self.gram = self.gram.add(&batch)?;
        self.samples += keys.cols();
        Ok(())
    }

    /// Combine two accumulators over the same dimension.
    ///
    /// # Errors
    ///
    /// [`NullspaceError::DimMismatch`].
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.dim != self.dim {
            return Err(NullspaceError::DimMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        self.gram = self.gram.add(&other.gram)?;
        self.samples += other.samples;
        Ok(())
    }
}

/// Orthogonal projector onto the null space of the preserved covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NullProjector {
    p: Matrix,
    u_null: Matrix,
    u_dom: Matrix,
    eigenvalues: Vec<f64>,
    cutoff: f64,
}

impl NullProjector {
    /// Reassemble a projector from a stored spectrum and null basis.
    ///
    /// `P` is rebuilt as `U2·U2ᵀ`; the dominant basis is recovered as the
    /// unit-eigenvalue eigenvectors of `I − P`.
    ///
    /// # Errors
    ///
    /// [`NullspaceError::DimMismatch`] when `u_null` rows differ from the
    /// spectrum length, [`NullspaceError::InvalidCutoff`],
    /// [`NullspaceError::NonFinite`].
    pub fn from_parts(eigenvalues: Vec<f64>, u_null: Matrix, cutoff: f64) -> Result<Self> {
        let d = eigenvalues.len();
        if u_null.rows() != d {
            return Err(NullspaceError::DimMismatch {
                expected: d,
                found: u_null.rows(),
            });
        }
        if u_null.cols() > d {
            return Err(NullspaceError::DimMismatch {
                expected: d,
                found: u_null.cols(),
            });
        }
        check_cutoff(cutoff)?;
        if eigenvalues.iter().any(|v| !v.is_finite()) || !u_null.is_finite() {
            return Err(NullspaceError::NonFinite);
        }
        let p = u_null.gram();
        let complement = Matrix::identity(d).sub(&p)?;
        let eig = sym_eig(&complement)?;
        let dom_rank = d - u_null.cols();
        let idx: Vec<usize> = (0..dom_rank).collect();
        let u_dom = eig.eigenvectors.select_columns(&idx);
        Ok(Self {
            p,
            u_null,
            u_dom,
            eigenvalues,
            cutoff,
        })
    }

    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    /// `P`, `d × d`.
    pub fn p(&self) -> &Matrix {
        &self.p
    }

    /// `U2`, `d × r`, orthonormal basis of the null space.
    pub fn u_null(&self) -> &Matrix {
        &self.u_null
    }

    /// `U1`, `d × (d − r)`, orthonormal basis of the preserved subspace.
    pub fn u_dom(&self) -> &Matrix {
        &self.u_dom
    }

    /// Covariance eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Dimension `r` of the null space.
    pub fn null_rank(&self) -> usize {
        self.u_null.cols()
    }

    /// `P·v`.
    ///
    /// # Errors
    ///
    /// [`NullspaceError::DimMismatch`].
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(NullspaceError::DimMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        Ok(self.p.matvec(v)?)
    }
}

fn check_cutoff(cutoff: f64) -> Result<()> {
    if cutoff.is_finite() && cutoff > 0.0 && cutoff < 1.0 {
        Ok(())
    } else {
        Err(NullspaceError::InvalidCutoff(cutoff))
    }
}

/// Split the eigenbasis of the accumulated covariance and build `P`.
///
/// # Errors
///
/// [`NullspaceError::EmptyDim`] for `d = 0`, [`NullspaceError::InvalidCutoff`]
/// unless `0 < cutoff < 1`, [`NullspaceError::NonFinite`].
pub fn build_projector(acc: &CovarianceAccumulator, cutoff: f64) -> Result<NullProjector> {
    let d = acc.dim();
    if d == 0 {
        return Err(NullspaceError::EmptyDim);
    }
    check_cutoff(cutoff)?;
    if !acc.gram().is_finite() {
        return Err(NullspaceError::NonFinite);
    }
    let eig = sym_eig(acc.gram())?;
    let lmax = eig.eigenvalues[0].max(0.0);

    let null_from = if lmax == 0.0 {
        0
    } else {
        let threshold = cutoff * lmax - TIE_BAND * lmax;
        eig.eigenvalues
            .iter()
            .position(|&l| l < threshold)
            .unwrap_or(d)
    };

    let dom_idx: Vec<usize> = (0..null_from).collect();
    let null_idx: Vec<usize> = (null_from..d).collect();
    let u_dom = eig.eigenvectors.select_columns(&dom_idx);
    let u_null = eig.eigenvectors.select_columns(&null_idx);
    let p = if lmax == 0.0 {
        Matrix::identity(d)
    } else {
        u_null.gram()
    };
    Ok(NullProjector {
        p,
        u_null,
        u_dom,
        eigenvalues: eig.eigenvalues,
        cutoff,
    })
}

/// Residuals of a probe against the preserved keys and their covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedNullReport {
    /// `‖probeᵀ·K0‖` over the supplied key sample.
    pub lhs_residual: f64,
    /// `‖probeᵀ·Σ‖` over the accumulated covariance.
    pub rhs_residual: f64,
}

/// Measure whether `probe` lies in the left null space of the keys and of
/// their covariance.
///
/// The two residuals vanish together: `‖xᵀK0‖² = xᵀ·Σ·x` when `Σ` is built
/// from the same `K0`.
///
/// # Errors
///
/// [`NullspaceError::DimMismatch`], [`NullspaceError::ZeroProbe`].
pub fn shared_nullspace_check(
    acc: &CovarianceAccumulator,
    keys_sample: &Matrix,
    probe: &[f64],
) -> Result<SharedNullReport> {
    let d = acc.dim();
    for found in [keys_sample.rows(), probe.len()] {
        if found != d {
            return Err(NullspaceError::DimMismatch { expected: d, found });
        }
    }
    if norm2(probe) == 0.0 {
        return Err(NullspaceError::ZeroProbe);
    }
    let lhs = norm2(&keys_sample.tr_matvec(probe)?);
    let rhs = norm2(&acc.gram().tr_matvec(probe)?);
    Ok(SharedNullReport {
        lhs_residual: lhs,
        rhs_residual: rhs,
    })
}

/// `xᵀ·Σ·x`.
///
/// # Errors
///
/// [`NullspaceError::DimMismatch`].
pub fn quadratic_form(acc: &CovarianceAccumulator, x: &[f64]) -> Result<f64> {
    if x.len() != acc.dim() {
        return Err(NullspaceError::DimMismatch {
            expected: acc.dim(),
            found: x.len(),
        });
    }
    Ok(dot(x, &acc.gram().matvec(x)?))
}

/// Split column indices `0..n` into accumulation and held-out sets.
///
/// Column `j` is held out when `j % 10 == 9`, giving a 90/10 split that
/// interleaves across the corpus.
pub fn holdout_split(n: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|j| j % HOLDOUT_EVERY != HOLDOUT_EVERY - 1)
}

/// `‖ΔW·K‖_F / (‖ΔW‖_F·‖K‖_F)`, defined as 0 when either factor vanishes.
///
/// # Errors
///
/// [`NullspaceError::DimMismatch`] when `delta.cols() != keys.rows()`.
pub fn relative_leakage(delta: &Matrix, keys: &Matrix) -> Result<f64> {
    if delta.cols() != keys.rows() {
        return Err(NullspaceError::DimMismatch {
            expected: delta.cols(),
            found: keys.rows(),
        });
    }
    let denom = frob_norm(delta) * frob_norm(keys);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(frob_norm(&delta.matmul(keys)?) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(i: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn zero_keys_keep_zero_gram() {
        let mut acc = CovarianceAccumulator::new(3);
        acc.accumulate(&Matrix::zeros(3, 4)).unwrap();
        assert_eq!(acc.gram(), &Matrix::zeros(3, 3));
        assert_eq!(acc.samples(), 4);
    }

    #[test]
    fn orthonormal_columns() {
        let mut acc = CovarianceAccumulator::new(3);
        acc.accumulate(&Matrix::column_vector(&e(0, 3))).unwrap();
        acc.accumulate(&Matrix::column_vector(&e(1, 3))).unwrap();
        assert_eq!(acc.gram(), &Matrix::from_diag(&[1.0, 1.0, 0.0]));
        assert_eq!(acc.samples(), 2);
    }

    #[test]
    fn dim_mismatch_and_nan() {
        let mut acc = CovarianceAccumulator::new(3);
        assert!(matches!(
            acc.accumulate(&Matrix::zeros(2, 1)),
            Err(NullspaceError::DimMismatch { .. })
        ));
        assert!(matches!(
            build_projector(&CovarianceAccumulator::new(0), 1e-8),
            Err(NullspaceError::EmptyDim)
        ));
        assert!(matches!(
            build_projector(&CovarianceAccumulator::new(2), 1.0),
            Err(NullspaceError::InvalidCutoff(_))
        ));
    }

    #[test]
    fn empty_covariance_gives_identity() {
        let proj = build_projector(&CovarianceAccumulator::new(3), DEFAULT_CUTOFF).unwrap();
        assert_eq!(proj.p(), &Matrix::identity(3));
        assert_eq!(proj.null_rank(), 3);
        assert_eq!(proj.u_dom().cols(), 0);
    }

    #[test]
    fn axis_aligned_key() {
        let acc = CovarianceAccumulator::from_keys(&Matrix::column_vector(&e(0, 3))).unwrap();
        let proj = build_projector(&acc, DEFAULT_CUTOFF).unwrap();
        assert_eq!(proj.null_rank(), 2);
        let want = Matrix::from_diag(&[0.0, 1.0, 1.0]);
        assert!(frob_norm(&proj.p().sub(&want).unwrap()) < 1e-15);
    }

    #[test]
    fn tie_at_cutoff_goes_to_dominant() {
        let cutoff = 1e-3;
        let acc_diag = |v: &[f64]| CovarianceAccumulator {
            dim: v.len(),
            gram: Matrix::from_diag(v),
            samples: 1,
        };
        // Exactly at the threshold and just inside the band: dominant.
        let proj = build_projector(&acc_diag(&[1.0, cutoff, 0.0]), cutoff).unwrap();
        assert_eq!(proj.null_rank(), 1);
        let proj = build_projector(&acc_diag(&[1.0, cutoff - 5e-13, 0.0]), cutoff).unwrap();
        assert_eq!(proj.null_rank(), 1);
        // Clearly below: null.
        let proj = build_projector(&acc_diag(&[1.0, cutoff * 0.5, 0.0]), cutoff).unwrap();
        assert_eq!(proj.null_rank(), 2);
    }

    #[test]
    fn shared_check_examples() {
        let k0 = Matrix::column_vector(&e(0, 3));
        let acc = CovarianceAccumulator::from_keys(&k0).unwrap();
        let r = shared_nullspace_check(&acc, &k0, &e(1, 3)).unwrap();
        assert_eq!((r.lhs_residual, r.rhs_residual), (0.0, 0.0));
        let r = shared_nullspace_check(&acc, &k0, &e(0, 3)).unwrap();
        assert_eq!((r.lhs_residual, r.rhs_residual), (1.0, 1.0));
        assert!(matches!(
            shared_nullspace_check(&acc, &k0, &[0.0; 3]),
            Err(NullspaceError::ZeroProbe)
        ));
        assert!(matches!(
            shared_nullspace_check(&acc, &Matrix::zeros(2, 1), &e(0, 3)),
            Err(NullspaceError::DimMismatch { .. })
        ));
    }

    #[test]
    fn holdout_is_ninety_ten() {
        let (acc, held) = holdout_split(100);
        assert_eq!((acc.len(), held.len()), (90, 10));
        assert_eq!(held[0], 9);
    }

    #[test]
    fn from_parts_round_trip() {
        let k0 = Matrix::from_fn(5, 2, |i, j| (i + 3 * j) as f64 - 2.0);
        let proj = build_projector(
            &CovarianceAccumulator::from_keys(&k0).unwrap(),
            DEFAULT_CUTOFF,
        )
        .unwrap();
        let back = NullProjector::from_parts(
            proj.eigenvalues().to_vec(),
            proj.u_null().clone(),
            proj.cutoff(),
        )
        .unwrap();
        assert_eq!(back.p(), proj.p());
        assert_eq!(back.u_dom().cols(), 2);
        let via_dom = Matrix::identity(5).sub(&back.u_dom().gram()).unwrap();
        assert!(frob_norm(&via_dom.sub(back.p()).unwrap()) < 1e-12);
    }
}
