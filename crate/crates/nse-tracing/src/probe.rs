// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cross-validated closed-form ridge probe.

use std::collections::BTreeMap;

use nse_tensor::{solve_spd, Matrix};
use nse_toymodel::ToyPlanner;

use crate::{Result, TraceError};

pub const DEFAULT_FOLDS: usize = 5;
/// Each class needs at least this many examples.
pub const MIN_PER_CLASS: usize = 4;
/// Ridge strength relative to `trace(XᵀX)/dim`.
pub const PROBE_RIDGE: f64 = 1e-3;

/// Accuracy of a one-vs-rest ridge probe on `features` (one row per
/// example), cross-validated over `folds` folds with example `i` in fold
/// `i % folds`.
///
/// An intercept column is appended. The ridge term is
/// `PROBE_RIDGE · trace(A)/dim` for the training Gram matrix `A`.
///
/// # Errors
///
/// [`TraceError::DegenerateLabels`] with fewer than two classes or a class
/// below [`MIN_PER_CLASS`]; [`TraceError::InvalidConfig`] for a bad fold
/// count or label count.
pub fn ridge_probe_cv(features: &Matrix, labels: &[usize], folds: usize) -> Result<f64> {
    let n = features.rows();
    if labels.len() != n {
        return Err(TraceError::InvalidConfig(format!(
            "{} labels for {n} examples",
            labels.len()
        )));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let min_count = counts.values().copied().min().unwrap_or(0);
    if counts.len() < 2 || min_count < MIN_PER_CLASS {
        return Err(TraceError::DegenerateLabels {
            classes: counts.len(),
            min_count,
        });
    }
    if folds < 2 || folds > n {
        return Err(TraceError::InvalidConfig(format!(
            "folds must be in 2..={n}, got {folds}"
        )));
    }
    let classes: Vec<usize> = counts.keys().copied().collect();
    let class_of = |l: usize| classes.binary_search(&l).unwrap_or(0);
    let dim = features.cols() + 1;
    let x = Matrix::from_fn(n, dim, |i, j| {
        if j + 1 == dim {
            1.0
        } else {
            features.get(i, j)
        }
    });

    let mut correct = 0usize;
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
        let mut a = Matrix::zeros(dim, dim);
        let mut b = Matrix::zeros(classes.len(), dim);
        for &i in &train {
            let row = x.row(i);
            for p in 0..dim {
                for q in 0..dim {
                    a.set(p, q, a.get(p, q) + row[p] * row[q]);
                }
            }
            let c = class_of(labels[i]);
            for (p, &v) in row.iter().enumerate() {
                b.set(c, p, b.get(c, p) + v);
            }
        }
        let lambda = PROBE_RIDGE * a.trace() / dim as f64;
        for p in 0..dim {
            a.set(p, p, a.get(p, p) + lambda);
        }
        // Rows of `w` are the per-class weight vectors.
        let w = solve_spd(&a, &b)?;
        for i in (0..n).filter(|i| i % folds == f) {
            let scores = w.matvec(x.row(i))?;
            if nse_toymodel::argmax(&scores) == class_of(labels[i]) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Probe accuracy for final-position hidden states after `layer`.
///
/// # Errors
///
/// As [`ridge_probe_cv`], plus token and layer errors.
pub fn probe_accuracy(
    model: &ToyPlanner,
    labeled: &[(Vec<usize>, usize)],
    layer: usize,
    folds: usize,
) -> Result<f64> {
    model.check_layer(layer)?;
    let rows = labeled
        .iter()
        .map(|(p, _)| {
            let t = model.forward(p)?;
            Ok(t.hidden_at(layer, p.len() - 1).to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let features = Matrix::from_rows(&rows)?;
    let labels: Vec<usize> = labeled.iter().map(|(_, l)| *l).collect();
    ridge_probe_cv(&features, &labels, folds)
}
