// SPDX-License-Identifier: MIT OR Apache-2.0

//! Finite-difference gradient norm with respect to a block's `W2`.

use nse_toymodel::{ModelError, ToyPlanner};

use crate::{Result, TraceError};

/// Relative step: `h = DEFAULT_FD_STEP · (1 + |w|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

fn neg_log_prob(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// `‖∂(−log p(target))/∂W2‖_F` at `layer` by central differences.
///
/// # Errors
///
/// As [`gradient_norm_with_step`].
pub fn gradient_norm(
    model: &ToyPlanner,
    prompt: &[usize],
    target: usize,
    layer: usize,
) -> Result<f64> {
    gradient_norm_with_step(model, prompt, target, layer, DEFAULT_FD_STEP)
}

/// [`gradient_norm`] with a custom relative step.
///
/// Perturbing `W2[a][b]` by `δ` adds `δ·k_i[b]` to coordinate `a` of every
/// position's block output, so each probe patches the stored residual
/// stream and resumes from the next block instead of rerunning the prefix.
///
/// # Errors
///
/// Token, layer and target errors; [`TraceError::InvalidConfig`] for a
/// non-positive step.
pub fn gradient_norm_with_step(
    model: &ToyPlanner,
    prompt: &[usize],
    target: usize,
    layer: usize,
    step: f64,
) -> Result<f64> {
    model.check_layer(layer)?;
    model.check_tokens(prompt)?;
    let vocab = model.config().vocab;
    if target >= vocab {
        return Err(ModelError::TokenOutOfRange {
            token: target,
            vocab,
        }
        .into());
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(TraceError::InvalidConfig(format!(
            "step must be positive, got {step}"
        )));
    }
    let trace = model.forward(prompt)?;
    let keys = &trace.keys[layer];
    let base = &trace.hidden[layer];
    let w2 = model.block(layer).w2();
    let n = prompt.len();

    let loss_at = |a: usize, b: usize, delta: f64| -> Result<f64> {
        let mut h = base.clone();
        for i in 0..n {
            let row = h.row_mut(i);
            row[a] += delta * keys.get(i, b);
        }
        Ok(neg_log_prob(&model.resume(layer + 1, h)?, target))
    };

    let mut sq = 0.0;
    for a in 0..w2.rows() {
        for b in 0..w2.cols() {
            let hstep = step * (1.0 + w2.get(a, b).abs());
            let g = (loss_at(a, b, hstep)? - loss_at(a, b, -hstep)?) / (2.0 * hstep);
            sq += g * g;
        }
    }
    Ok(sq.sqrt())
}
