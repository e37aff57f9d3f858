// SPDX-License-Identifier: MIT OR Apache-2.0

//! Key collection, target values, planting and edit application.

use nse_tensor::{norm2, outer, Matrix};

use crate::model::{block_output, prefix_runs};
use crate::{ModelError, Result, ToyPlanner};

/// Scale cap of the doubling search.
pub const C_MAX: f64 = 65_536.0;
/// Bisection stops once the bracket is this narrow.
pub const SEARCH_TOL: f64 = 1e-3;
/// Default logit margin.
pub const DEFAULT_MARGIN: f64 = 1.0;
/// Planting retries, each with double the solve margin.
pub const PLANT_ATTEMPTS: u32 = 6;

/// Result of [`solve_target_value`].
#[derive(Debug, Clone, PartialEq)]
pub struct TargetValue {
    /// `v* = W2·k* + c·u`.
    pub value: Vec<f64>,
    /// The scale `c`.
    pub scale: f64,
    /// Highest-logit token other than the target, used to build `u`.
    pub competitor: usize,
}

/// A planted model and the token it now predicts.
#[derive(Debug, Clone)]
pub struct Planted {
    pub model: ToyPlanner,
    pub token: usize,
    pub layer: usize,
}

/// `W2 · key` at `layer`.
///
/// # Errors
///
/// [`ModelError::LayerOutOfRange`], [`ModelError::DimMismatch`].
pub fn block_output_at(model: &ToyPlanner, layer: usize, key: &[f64]) -> Result<Vec<f64>> {
    model.check_layer(layer)?;
    let dh = model.config().d_hidden;
    if key.len() != dh {
        return Err(ModelError::DimMismatch {
            what: "key",
            expected: (dh, 1),
            found: (key.len(), 1),
        });
    }
    Ok(block_output(model, layer, key))
}

/// Final-position keys at `layer`, one column per prompt (`d_hidden × N`).
///
/// Consecutive prompts that extend one another share a forward pass; the
/// columns are bit-identical to per-prompt passes.
///
/// # Errors
///
/// [`ModelError::EmptyCorpus`], [`ModelError::LayerOutOfRange`], token errors.
pub fn collect_keys(model: &ToyPlanner, corpus: &[Vec<usize>], layer: usize) -> Result<Matrix> {
    model.check_layer(layer)?;
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mut cols = Vec::with_capacity(corpus.len());
    for run in prefix_runs(corpus) {
        let longest = &corpus[*run.last().unwrap_or(&0)];
        let trace = model.forward(longest)?;
        for &i in &run {
            cols.push(trace.key_at(layer, corpus[i].len() - 1).to_vec());
        }
    }
    Ok(Matrix::from_columns(model.config().d_hidden, &cols)?)
}

/// Keys at every position of every prompt, in prompt then position order.
///
/// # Errors
///
/// As [`collect_keys`].
pub fn collect_keys_all_positions(
    model: &ToyPlanner,
    corpus: &[Vec<usize>],
    layer: usize,
) -> Result<Matrix> {
    model.check_layer(layer)?;
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mut cols = Vec::new();
    for p in corpus {
        let trace = model.forward(p)?;
        cols.extend((0..p.len()).map(|i| trace.key_at(layer, i).to_vec()));
    }
    Ok(Matrix::from_columns(model.config().d_hidden, &cols)?)
}

/// Smallest scale `c` (to within [`SEARCH_TOL`]) such that forcing block
/// `layer`'s output at the final position to `W2·k* + c·u` makes
/// `target` the argmax by at least `margin`.
///
/// `u` is the normalized difference of the unembedding rows of `target` and
/// its strongest competitor. The search doubles `c` from 1 up to [`C_MAX`]
/// and then bisects. When the target already wins by `margin`, `c = 0`.
///
/// # Errors
///
/// [`ModelError::TargetUnreachable`] when `C_MAX` is not enough; token,
/// layer and parameter errors.
pub fn solve_target_value(
    model: &ToyPlanner,
    prompt: &[usize],
    target: usize,
    layer: usize,
    margin: f64,
) -> Result<TargetValue> {
    model.check_layer(layer)?;
    model.check_tokens(prompt)?;
    let vocab = model.config().vocab;
    if target >= vocab {
        return Err(ModelError::TokenOutOfRange {
            token: target,
            vocab,
        });
    }
    if !margin.is_finite() {
        return Err(ModelError::InvalidConfig(format!(
            "margin must be finite, got {margin}"
        )));
    }
    let trace = model.forward(prompt)?;
    let n = prompt.len();
    let base = block_output(model, layer, trace.final_key(layer));
    let competitor = (0..vocab)
        .filter(|&j| j != target)
        .fold(None, |best: Option<usize>, j| match best {
            Some(b) if trace.logits[b] >= trace.logits[j] => Some(b),
            _ => Some(j),
        })
        .unwrap_or(0);
    if trace.margin(target) >= margin {
        return Ok(TargetValue {
            value: base,
            scale: 0.0,
            competitor,
        });
    }

    let unembed = model.unembed();
    let mut u: Vec<f64> = unembed
        .row(target)
        .iter()
        .zip(unembed.row(competitor))
        .map(|(a, b)| a - b)
        .collect();
    let un = norm2(&u);
    let unreachable = || ModelError::TargetUnreachable {
        token: target,
        layer,
        margin,
        cap: C_MAX,
    };
    if un == 0.0 {
        return Err(unreachable());
    }
    for x in &mut u {
        *x /= un;
    }

    // Residual entering the final position of `layer`, before the block adds
    // its output.
    let prev_row: Vec<f64> = if layer == 0 {
        model.embed().row(prompt[n - 1]).to_vec()
    } else {
        trace.hidden_at(layer - 1, n - 1).to_vec()
    };
    let value_at = |c: f64| -> Vec<f64> { base.iter().zip(&u).map(|(b, d)| b + c * d).collect() };
    let achieves = |c: f64| -> Result<bool> {
        let v = value_at(c);
        let mut h = trace.hidden[layer].clone();
        for ((o, p), x) in h.row_mut(n - 1).iter_mut().zip(&prev_row).zip(&v) {
            *o = p + x;
        }
        let logits = model.resume(layer + 1, h)?;
        Ok(crate::logit_margin(&logits, target) >= margin)
    };

    let mut hi = 1.0;
    while !achieves(hi)? {
        hi *= 2.0;
        if hi > C_MAX {
            return Err(unreachable());
        }
    }
    let mut lo = if hi == 1.0 { 0.0 } else { hi / 2.0 };
    while hi - lo > SEARCH_TOL {
        let mid = 0.5 * (lo + hi);
        if achieves(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(TargetValue {
        value: value_at(hi),
        scale: hi,
        competitor,
    })
}

/// `W2 ← W2 + ΔW` at `layer`, as a new model.
///
/// # Errors
///
/// [`ModelError::LayerOutOfRange`], [`ModelError::DimMismatch`],
/// [`ModelError::NonFinite`].
pub fn apply_edit(model: &ToyPlanner, layer: usize, delta: &Matrix) -> Result<ToyPlanner> {
    model.check_layer(layer)?;
    let w2 = model.block(layer).w2();
    if delta.shape() != w2.shape() {
        return Err(ModelError::DimMismatch {
            what: "edit delta",
            expected: w2.shape(),
            found: delta.shape(),
        });
    }
    model.with_w2(layer, w2.add(delta)?)
}

/// Make `prompt` predict `wrong_token` with at least `margin` by a rank-one
/// bump of `W2` at `layer` along the prompt's clean key.
///
/// The bump writes the value from [`solve_target_value`]. Because it also
/// moves earlier positions of the prompt, the result is re-checked and the
/// solve margin doubled up to [`PLANT_ATTEMPTS`] times.
///
/// # Errors
///
/// [`ModelError::PlantFailed`]; token and layer errors.
pub fn plant_association(
    model: &ToyPlanner,
    prompt: &[usize],
    wrong_token: usize,
    layer: usize,
    margin: f64,
) -> Result<ToyPlanner> {
    model.check_layer(layer)?;
    model.check_tokens(prompt)?;
    let vocab = model.config().vocab;
    if wrong_token >= vocab {
        return Err(ModelError::TokenOutOfRange {
            token: wrong_token,
            vocab,
        });
    }
    let failed = |reason: String| ModelError::PlantFailed {
        token: wrong_token,
        layer,
        reason,
    };
    let trace = model.forward(prompt)?;
    let key = trace.final_key(layer);
    let kk = key.iter().map(|x| x * x).sum::<f64>();
    if kk == 0.0 {
        return Err(failed("prompt key is zero".into()));
    }
    let scaled_key: Vec<f64> = key.iter().map(|x| x / kk).collect();
    let current = block_output(model, layer, key);

    let mut solve_margin = margin;
    for _ in 0..PLANT_ATTEMPTS {
        let tv = match solve_target_value(model, prompt, wrong_token, layer, solve_margin) {
            Ok(tv) => tv,
            Err(ModelError::TargetUnreachable { .. }) => {
                return Err(failed(format!("margin {solve_margin} unreachable")))
            }
            Err(e) => return Err(e),
        };
        let resid: Vec<f64> = tv.value.iter().zip(&current).map(|(v, c)| v - c).collect();
        let planted = apply_edit(model, layer, &outer(&resid, &scaled_key))?;
        let after = planted.forward(prompt)?;
        if after.argmax() == wrong_token && after.margin(wrong_token) >= margin {
            return Ok(planted);
        }
        solve_margin *= 2.0;
    }
    Err(failed(format!(
        "margin {margin} not met after {PLANT_ATTEMPTS} attempts"
    )))
}

/// Plant some wrong token: candidates are tried in the order
/// `argmax + 1 + (start + j) mod (V − 1)`, wrapping modulo `V`.
///
/// # Errors
///
/// [`ModelError::PlantFailed`] when no candidate can be planted.
pub fn plant_any(
    model: &ToyPlanner,
    prompt: &[usize],
    layer: usize,
    margin: f64,
    start: usize,
) -> Result<Planted> {
    let vocab = model.config().vocab;
    let current = model.forward(prompt)?.argmax();
    let mut last_err = None;
    for j in 0..vocab - 1 {
        let token = (current + 1 + (start + j) % (vocab - 1)) % vocab;
        match plant_association(model, prompt, token, layer, margin) {
            Ok(m) => {
                return Ok(Planted {
                    model: m,
                    token,
                    layer,
                })
            }
            Err(e @ ModelError::PlantFailed { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or(ModelError::PlantFailed {
        token: current,
        layer,
        reason: "no candidate token".into(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{init_planner, Intervention, PlannerConfig};

    fn model(layers: usize) -> ToyPlanner {
        init_planner(&PlannerConfig {
            d_model: 16,
            d_hidden: 16,
            vocab: 12,
            layers,
            seed: 21,
            ..PlannerConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn already_winning_gives_zero_scale() {
        let m = model(3);
        let p = [1, 5, 2];
        let t = m.forward(&p).unwrap();
        let top = t.argmax();
        let tv = solve_target_value(&m, &p, top, 1, t.margin(top)).unwrap();
        assert_eq!(tv.scale, 0.0);
        assert_eq!(tv.value, block_output(&m, 1, t.final_key(1)));
    }

    #[test]
    fn solved_value_meets_margin() {
        let m = model(3);
        let p = [4, 4, 0, 7];
        let top = m.forward(&p).unwrap().argmax();
        let mut solved = 0;
        for target in (0..12).filter(|&t| t != top) {
            for layer in 0..3 {
                let Ok(tv) = solve_target_value(&m, &p, target, layer, 1.0) else {
                    continue;
                };
                let iv = Intervention {
                    forced_output: Some((layer, &tv.value)),
                    ..Intervention::default()
                };
                let forced = m.forward_with(&p, &iv).unwrap();
                assert!(forced.margin(target) >= 1.0);
                assert!(tv.scale > 0.0 && tv.competitor == top);
                solved += 1;
            }
        }
        assert!(solved >= 20, "only {solved} of 33 targets reachable");
    }

    #[test]
    fn collect_matches_single_forwards() {
        let m = model(2);
        let corpus = vec![vec![3], vec![3, 1], vec![3, 1, 4], vec![2, 2], vec![3, 1]];
        let k = collect_keys(&m, &corpus, 1).unwrap();
        assert_eq!(k.shape(), (16, 5));
        for (j, p) in corpus.iter().enumerate() {
            assert_eq!(k.column(j), m.forward(p).unwrap().final_key(1));
        }
        assert_eq!(k.column(1), k.column(4));
        let all = collect_keys_all_positions(&m, &corpus[2..3], 1).unwrap();
        assert_eq!(all.column(2), k.column(2));
        assert!(matches!(
            collect_keys(&m, &[], 0),
            Err(ModelError::EmptyCorpus)
        ));
        assert!(matches!(
            collect_keys(&m, &corpus, 2),
            Err(ModelError::LayerOutOfRange { .. })
        ));
    }

    #[test]
    fn plant_then_check() {
        let m = model(4);
        let p = [9, 3, 3, 1, 0];
        let top = m.forward(&p).unwrap().argmax();
        let wrong = (top + 1) % 12;
        let planted = plant_association(&m, &p, wrong, 2, 0.5).unwrap();
        let t = planted.forward(&p).unwrap();
        assert_eq!(t.argmax(), wrong);
        assert!(t.margin(wrong) >= 0.5);
    }

    #[test]
    fn apply_edit_rejects_bad_shape() {
        let m = model(2);
        assert!(matches!(
            apply_edit(&m, 0, &Matrix::zeros(16, 17)),
            Err(ModelError::DimMismatch { .. })
        ));
        let same = apply_edit(&m, 1, &Matrix::zeros(16, 16)).unwrap();
        assert_eq!(same, m);
    }
}
