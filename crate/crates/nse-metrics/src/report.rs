// SPDX-License-Identifier: MIT OR Apache-2.0

use nse_nullspace::relative_leakage;
use nse_tensor::{frob_norm, norm2, Matrix};
use nse_toymodel::{argmax, block_output_at, ToyPlanner};
use serde::{Deserialize, Serialize};

use crate::{MetricsError, Result};

/// Probabilities are clamped to at least this inside the KL logarithm.
pub const KL_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    /// `‖W2'·k* − v*‖` at the edited layer.
    pub target_residual: f64,
    /// `‖ΔW·K0‖_F / (‖ΔW‖_F·‖K0‖_F)` over the held-out keys; 0 for `ΔW = 0`.
    pub constraint_residual_rel: f64,
    /// Fraction of preserved prompts whose predicted token changed.
    pub preserved_argmax_drift: f64,
    /// Mean `KL(before ‖ after)` of the final-token distributions.
    pub preserved_kl_mean: f64,
    pub delta_frob: f64,
    /// The target prompt now predicts the target token.
    pub edit_succeeded: bool,
}

impl EditReport {
    pub fn summary_line(&self) -> String {
        format!(
            "edit {}: target_residual={:.3e} constraint_residual_rel={:.3e} drift={:.4} kl_mean={:.3e} |dW|={:.4}",
            if self.edit_succeeded { "succeeded" } else { "FAILED" },
            self.target_residual,
            self.constraint_residual_rel,
            self.preserved_argmax_drift,
            self.preserved_kl_mean,
            self.delta_frob
        )
    }
}

/// What the edit was supposed to achieve.
#[derive(Debug, Clone, Copy)]
pub struct EditTarget<'a> {
    pub prompt: &'a [usize],
    pub token: usize,
    /// The value `v*` written for the prompt's key.
    pub value: &'a [f64],
}

/// `KL(p ‖ q)` with both sides clamped at [`KL_CLAMP`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let a = a.max(KL_CLAMP);
            let b = b.max(KL_CLAMP);
            a * (a / b).ln()
        })
        .sum::<f64>()
        .max(0.0)
}

fn dim_check(what: &'static str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(MetricsError::DimMismatch {
            what,
            expected,
            found,
        })
    }
}

/// Score an applied edit.
///
/// `k0_sample` holds preserved keys (`d_hidden × N`) that were not used to
/// build the projector. Drift and KL are measured on `preserved` prompts;
/// with none, both are 0.
///
/// # Errors
///
/// [`MetricsError::DimMismatch`] when configs, `delta`, `k0_sample` or the
/// value disagree; model errors for bad prompts or layer.
pub fn verify_edit(
    before: &ToyPlanner,
    after: &ToyPlanner,
    layer: usize,
    delta: &Matrix,
    k0_sample: &Matrix,
    target: &EditTarget<'_>,
    preserved: &[Vec<usize>],
) -> Result<EditReport> {
    let cb = before.config();
    let ca = after.config();
    let same = cb.d_model == ca.d_model
        && cb.d_hidden == ca.d_hidden
        && cb.vocab == ca.vocab
        && cb.layers == ca.layers;
    if !same {
        return Err(MetricsError::DimMismatch {
            what: "model configs",
            expected: (cb.d_model, cb.d_hidden),
            found: (ca.d_model, ca.d_hidden),
        });
    }
    before.check_layer(layer)?;
    dim_check("delta", (cb.d_model, cb.d_hidden), delta.shape())?;
    dim_check("k0 rows", (cb.d_hidden, 0), (k0_sample.rows(), 0))?;
    dim_check("target value", (cb.d_model, 1), (target.value.len(), 1))?;
    if target.token >= cb.vocab {
        return Err(nse_toymodel::ModelError::TokenOutOfRange {
            token: target.token,
            vocab: cb.vocab,
        }
        .into());
    }

    let trace = after.forward(target.prompt)?;
    let out = block_output_at(after, layer, trace.final_key(layer))?;
    let resid: Vec<f64> = out.iter().zip(target.value).map(|(a, b)| a - b).collect();

    let (drift, kl) = if preserved.is_empty() {
        (0.0, 0.0)
    } else {
        let pb = before.final_probs_batch(preserved)?;
        let pa = after.final_probs_batch(preserved)?;
        let changed = pb
            .iter()
            .zip(&pa)
            .filter(|(x, y)| argmax(x) != argmax(y))
            .count();
        let kl_sum: f64 = pb.iter().zip(&pa).map(|(x, y)| kl_divergence(x, y)).sum();
        let n = preserved.len() as f64;
        (changed as f64 / n, kl_sum / n)
    };

    Ok(EditReport {
        target_residual: norm2(&resid),
        constraint_residual_rel: relative_leakage(delta, k0_sample)?,
        preserved_argmax_drift: drift,
        preserved_kl_mean: kl,
        delta_frob: frob_norm(delta),
        edit_succeeded: trace.argmax() == target.token,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_basics() {
        let p = [0.5, 0.5];
        assert_eq!(kl_divergence(&p, &p), 0.0);
        let k = kl_divergence(&[1.0, 0.0], &[0.0, 1.0]);
        assert!(k.is_finite() && k > 0.0);
        let k = kl_divergence(&[0.25, 0.75], &[0.5, 0.5]);
        let exact = 0.25 * 0.5f64.ln() + 0.75 * 1.5f64.ln();
        assert!((k - exact).abs() < 1e-15);
    }
}
