// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded planted-association localization instances.

use std::collections::BTreeMap;

use nse_toymodel::corpus::random_prompt;
use nse_toymodel::seed::stream;
use nse_toymodel::{init_planner, plant_any, PlannerConfig, ToyPlanner};
use rand::Rng;

use crate::grad::gradient_norm;
use crate::impact::{causal_impact, TraceConfig};
use crate::probe::{probe_accuracy, DEFAULT_FOLDS};
use crate::rank::ImpactProfile;
use crate::Result;

pub const LOCALIZATION_PROMPT_LEN: usize = 8;
/// Logit margin of the planted association. A margin of 1 barely flips the
/// prediction and is hard to tell apart from corruption noise.
pub const LOCALIZATION_MARGIN: f64 = 2.0;
/// The probe keeps the most frequent predicted tokens as classes.
pub const PROBE_CLASSES: usize = 4;
const PROBE_CORPUS: usize = 400;

/// A model with one wrong association planted at a random layer.
#[derive(Debug, Clone)]
pub struct LocalizationCase {
    pub seed: u64,
    pub clean: ToyPlanner,
    pub planted: ToyPlanner,
    pub prompt: Vec<usize>,
    /// Ground-truth layer.
    pub layer: usize,
    /// The planted token `c*`.
    pub token: usize,
}

impl LocalizationCase {
    /// Default-sized planner seeded by `seed`, a random prompt, a random
    /// layer, and the first wrong token that plants with
    /// [`LOCALIZATION_MARGIN`].
    ///
    /// # Errors
    ///
    /// Planting errors.
    pub fn build(seed: u64) -> Result<Self> {
        let cfg = PlannerConfig {
            seed,
            ..PlannerConfig::default()
        };
        let clean = init_planner(&cfg)?;
        let prompt = random_prompt(
            &mut stream(seed, "prompt"),
            cfg.vocab,
            LOCALIZATION_PROMPT_LEN..=LOCALIZATION_PROMPT_LEN,
        );
        let layer = stream(seed, "plant-layer").random_range(0..cfg.layers);
        let p = plant_any(&clean, &prompt, layer, LOCALIZATION_MARGIN, 0)?;
        Ok(Self {
            seed,
            clean,
            planted: p.model,
            prompt,
            layer,
            token: p.token,
        })
    }
}

/// `n` random prompts labeled by the model's own prediction, restricted to
/// the [`PROBE_CLASSES`] most frequent predictions.
///
/// # Errors
///
/// Token errors.
pub fn labeled_corpus(model: &ToyPlanner, seed: u64, n: usize) -> Result<Vec<(Vec<usize>, usize)>> {
    let mut r = stream(seed, "probe");
    let vocab = model.config().vocab;
    let mut all = Vec::with_capacity(n);
    for _ in 0..n {
        let p = random_prompt(
            &mut r,
            vocab,
            LOCALIZATION_PROMPT_LEN..=LOCALIZATION_PROMPT_LEN,
        );
        let label = model.forward(&p)?.argmax();
        all.push((p, label));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, l) in &all {
        *counts.entry(*l).or_default() += 1;
    }
    let mut ranked: Vec<(usize, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let keep: Vec<usize> = ranked.iter().take(PROBE_CLASSES).map(|&(l, _)| l).collect();
    Ok(all.into_iter().filter(|(_, l)| keep.contains(l)).collect())
}

/// All three scores for every layer of the planted model, with `c*` as the
/// traced token.
///
/// # Errors
///
/// Trace, probe and gradient errors.
pub fn localize(case: &LocalizationCase, cfg: &TraceConfig) -> Result<ImpactProfile> {
    let m = &case.planted;
    let mut profile = causal_impact(m, &case.prompt, case.token, cfg)?;
    let labeled = labeled_corpus(m, case.seed, PROBE_CORPUS)?;
    for l in &mut profile.layers {
        l.probe_accuracy = Some(probe_accuracy(m, &labeled, l.layer, DEFAULT_FOLDS)?);
        l.grad_norm = Some(gradient_norm(m, &case.prompt, case.token, l.layer)?);
    }
    Ok(profile)
}
