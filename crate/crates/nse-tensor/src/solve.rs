// SPDX-License-Identifier: MIT OR Apache-2.0

//! Right-sided linear solves `X · M = B`.
//!
//! Both solvers work row by row on `B`: each row `b` of `B` gives one system
//! `Mᵀ xᵀ = bᵀ`. No explicit inverse is ever formed.

use crate::error::{Result, TensorError};
use crate::matrix::Matrix;

/// Cholesky pivots must exceed this fraction of `trace(M)/d`.
pub const SPD_PIVOT_REL: f64 = 1e-12;

fn check_system(m: &Matrix, b: &Matrix, op: &'static str) -> Result<()> {
    if !m.is_square() {
        return Err(TensorError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if b.cols() != m.rows() {
        return Err(TensorError::Shape {
            op,
            left: b.shape(),
            right: m.shape(),
        });
    }
    if !m.is_finite() || !b.is_finite() {
        return Err(TensorError::NonFinite);
    }
    Ok(())
}

/// Solve `X · M = B` for symmetric positive definite `M` by Cholesky.
///
/// Only the lower triangle of `M` is read.
///
/// # Errors
///
/// [`TensorError::NotPositiveDefinite`] when a pivot falls to or below
/// `1e-12 · trace(M)/d` (or the trace itself is not positive),
/// [`TensorError::NotSquare`], [`TensorError::Shape`], [`TensorError::NonFinite`].
pub fn solve_spd(m: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_system(m, b, "solve_spd")?;
    let d = m.rows();
    if d == 0 {
        return Ok(Matrix::zeros(b.rows(), 0));
    }
    let threshold = SPD_PIVOT_REL * m.trace() / d as f64;
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(TensorError::NotPositiveDefinite {
            index: 0,
            pivot: m.trace(),
            threshold: 0.0,
        });
    }

    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut s = m.get(j, j);
        for k in 0..j {
            s -= l[j * d + k] * l[j * d + k];
        }
        if s.is_nan() || s <= threshold {
            return Err(TensorError::NotPositiveDefinite {
                index: j,
                pivot: s,
                threshold,
            });
        }
        let ljj = s.sqrt();
        l[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }

    let mut out = Matrix::zeros(b.rows(), d);
    let mut y = vec![0.0; d];
    for r in 0..b.rows() {
        let rhs = b.row(r);
        for i in 0..d {
            let mut s = rhs[i];
            for k in 0..i {
                s -= l[i * d + k] * y[k];
            }
            y[i] = s / l[i * d + i];
        }
        let x = out.row_mut(r);
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in i + 1..d {
                s -= l[k * d + i] * x[k];
            }
            x[i] = s / l[i * d + i];
        }
    }
    Ok(out)
}

/// Solve `X · M = B` for a general nonsingular `M` by LU with partial pivoting.
///
/// # Errors
///
/// [`TensorError::Singular`] on an exactly zero pivot,
/// [`TensorError::NotSquare`], [`TensorError::Shape`], [`TensorError::NonFinite`].
pub fn solve_general(m: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_system(m, b, "solve_general")?;
    let d = m.rows();
    // Factor A = Mᵀ in place: P·A = L·U.
    let mut a = m.transpose().into_data();
    let mut perm: Vec<usize> = (0..d).collect();
    for col in 0..d {
        let mut piv = col;
        let mut best = a[col * d + col].abs();
        for r in col + 1..d {
            let v = a[r * d + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return Err(TensorError::Singular { index: col });
        }
        if piv != col {
            for k in 0..d {
                a.swap(col * d + k, piv * d + k);
            }
            perm.swap(col, piv);
        }
        let p = a[col * d + col];
        for r in col + 1..d {
            let f = a[r * d + col] / p;
            a[r * d + col] = f;
            for k in col + 1..d {
                a[r * d + k] -= f * a[col * d + k];
            }
        }
    }

    let mut out = Matrix::zeros(b.rows(), d);
    let mut y = vec![0.0; d];
    for r in 0..b.rows() {
        let rhs = b.row(r);
        for i in 0..d {
            let mut s = rhs[perm[i]];
            for k in 0..i {
                s -= a[i * d + k] * y[k];
            }
            y[i] = s;
        }
        let x = out.row_mut(r);
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in i + 1..d {
                s -= a[i * d + k] * x[k];
            }
            x[i] = s / a[i * d + i];
        }
    }
    if !out.is_finite() {
        return Err(TensorError::NonFinite);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::frob_norm;

    #[test]
    fn identity_system_returns_rhs() {
        let b = Matrix::from_fn(3, 4, |i, j| (i as f64) - 0.5 * j as f64);
        assert_eq!(solve_spd(&Matrix::identity(4), &b).unwrap(), b);
        assert_eq!(solve_general(&Matrix::identity(4), &b).unwrap(), b);
    }

    #[test]
    fn diagonal_hand_case() {
        let m = Matrix::from_diag(&[2.0, 1.0]);
        let b = Matrix::new(1, 2, vec![4.0, 1.0]).unwrap();
        let x = solve_spd(&m, &b).unwrap();
        assert!((x.get(0, 0) - 2.0).abs() <= 1e-15 && (x.get(0, 1) - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn indefinite_is_rejected() {
        // Eigenvalues 1.5 and -0.5.
        let m = Matrix::new(2, 2, vec![0.5, 1.0, 1.0, 0.5]).unwrap();
        let b = Matrix::new(1, 2, vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            solve_spd(&m, &b),
            Err(TensorError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn tiny_pivot_is_rejected() {
        let m = Matrix::from_diag(&[1.0, 1e-14]);
        let b = Matrix::new(1, 2, vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            solve_spd(&m, &b),
            Err(TensorError::NotPositiveDefinite { index: 1, .. })
        ));
    }

    #[test]
    fn general_solve_nonsymmetric() {
        let m = Matrix::new(3, 3, vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0]).unwrap();
        let b = Matrix::from_fn(2, 3, |i, j| (i + 2 * j) as f64 - 1.0);
        let x = solve_general(&m, &b).unwrap();
        let back = x.matmul(&m).unwrap();
        assert!(frob_norm(&back.sub(&b).unwrap()) <= 1e-12 * frob_norm(&b));
        let singular = Matrix::new(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(solve_general(&singular, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn shape_checks() {
        assert!(matches!(
            solve_spd(&Matrix::identity(3), &Matrix::zeros(2, 2)),
            Err(TensorError::Shape { .. })
        ));
        assert!(matches!(
            solve_spd(&Matrix::zeros(2, 3), &Matrix::zeros(2, 2)),
            Err(TensorError::NotSquare { .. })
        ));
    }
}
