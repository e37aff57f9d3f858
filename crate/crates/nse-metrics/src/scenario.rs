// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded plant-and-edit scenarios.
//!
//! A scenario plants a wrong association into a fresh planner, collects
//! preserved keys at the planted layer from a prefix-closed corpus, builds
//! the null-space projector, and then corrects the association with either
//! the constrained or the naive rank-one edit.

use nse_editor::{naive_edit, rank_one_edit, EditRequest, DEFAULT_TAU};
use nse_nullspace::{build_projector, CovarianceAccumulator, NullProjector, DEFAULT_CUTOFF};
use nse_tensor::Matrix;
use nse_toymodel::corpus::{prefixes, random_prompt};
use nse_toymodel::seed::stream;
use nse_toymodel::{
    apply_edit, argmax, collect_keys, init_planner, plant_any, solve_target_value, PlannerConfig,
    ToyPlanner, DEFAULT_MARGIN,
};
use rand::Rng;

use crate::report::{verify_edit, EditReport, EditTarget};
use crate::{MetricsError, Result};

/// `v*` solves, each with double the margin, before giving up on success.
pub const V_STAR_ATTEMPTS: u32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub d_model: usize,
    pub d_hidden: usize,
    pub vocab: usize,
    pub layers: usize,
    pub prompt_len: usize,
    pub base_len_min: usize,
    pub base_len_max: usize,
    pub margin: f64,
    pub cutoff: f64,
    pub tau: f64,
    /// Preserved keys to collect; `None` means `7/8 · d_hidden`, leaving the
    /// key matrix rank-deficient.
    pub preserved_keys: Option<usize>,
    /// Held-out prompts as a fraction of the preserved count.
    pub holdout_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            d_hidden: 512,
            vocab: 64,
            layers: 8,
            prompt_len: 8,
            base_len_min: 4,
            base_len_max: 12,
            margin: DEFAULT_MARGIN,
            cutoff: DEFAULT_CUTOFF,
            tau: DEFAULT_TAU,
            preserved_keys: None,
            holdout_fraction: 0.1,
        }
    }
}

impl ScenarioConfig {
    pub fn planner(&self, seed: u64) -> PlannerConfig {
        PlannerConfig {
            d_model: self.d_model,
            d_hidden: self.d_hidden,
            vocab: self.vocab,
            layers: self.layers,
            seed,
            ..PlannerConfig::default()
        }
    }

    pub fn preserved_target(&self) -> usize {
        self.preserved_keys.unwrap_or(self.d_hidden * 7 / 8)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.prompt_len >= 1
            && self.base_len_min >= 1
            && self.base_len_min <= self.base_len_max
            && self.margin.is_finite()
            && self.holdout_fraction.is_finite()
            && self.holdout_fraction > 0.0
            && self.preserved_target() >= 1;
        if ok {
            Ok(())
        } else {
            Err(MetricsError::InvalidParameter(format!("{self:?}")))
        }
    }
}

/// What to plant and edit in [`EditScenario::from_plan`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPlan {
    pub prompt: Vec<usize>,
    pub edit_layer: usize,
    pub plant_layer: Option<usize>,
    /// Token the edit should produce.
    pub target: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditMode {
    Constrained,
    Naive,
}

#[derive(Debug, Clone)]
pub struct EditScenario {
    pub seed: u64,
    pub config: ScenarioConfig,
    pub clean: ToyPlanner,
    pub planted: ToyPlanner,
    pub layer: usize,
    pub prompt: Vec<usize>,
    /// The clean model's prediction, restored by the edit.
    pub correct_token: usize,
    pub wrong_token: usize,
    /// Prefix-closed prompts whose keys build the projector.
    pub preserved: Vec<Vec<usize>>,
    pub k0: Matrix,
    /// Prompts kept out of the projector.
    pub heldout: Vec<Vec<usize>>,
    pub k0_heldout: Matrix,
    pub projector: NullProjector,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub mode: EditMode,
    pub report: EditReport,
    /// Argmax drift on the held-out prompts.
    pub heldout_drift: f64,
    pub delta: Matrix,
    pub value: Vec<f64>,
    /// `v*` solves used.
    pub attempts: u32,
    pub edited: ToyPlanner,
}

/// Whole base sequences, expanded to prefixes, until at least `min` prompts.
/// Bases that would contain `avoid` as a prefix are skipped.
pub fn prefix_corpus<R: Rng>(
    rng: &mut R,
    cfg: &ScenarioConfig,
    min: usize,
    avoid: &[usize],
) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    while out.len() < min {
        let base = random_prompt(rng, cfg.vocab, cfg.base_len_min..=cfg.base_len_max);
        if !avoid.is_empty() && base.starts_with(avoid) {
            continue;
        }
        out.extend(prefixes(&base));
    }
    out
}

fn drift(before: &ToyPlanner, after: &ToyPlanner, prompts: &[Vec<usize>]) -> Result<f64> {
    if prompts.is_empty() {
        return Ok(0.0);
    }
    let a = before.final_probs_batch(prompts)?;
    let b = after.final_probs_batch(prompts)?;
    let changed = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| argmax(x) != argmax(y))
        .count();
    Ok(changed as f64 / prompts.len() as f64)
}

impl EditScenario {
    /// # Errors
    ///
    /// Planting, collection and projector errors.
    pub fn build(seed: u64, config: &ScenarioConfig) -> Result<Self> {
        let (clean, plan) = Self::draw(seed, config)?;
        Self::from_plan(seed, config, clean, plan)
    }

    /// The clean model, prompt and planting layer that [`EditScenario::build`]
    /// uses for `seed`. The prompt comes from the `"target"` stream and the
    /// layer from the `"edit-layer"` stream.
    ///
    /// # Errors
    ///
    /// Config errors.
    pub fn draw(seed: u64, config: &ScenarioConfig) -> Result<(ToyPlanner, ScenarioPlan)> {
        config.validate()?;
        let clean = init_planner(&config.planner(seed))?;
        let prompt = random_prompt(
            &mut stream(seed, "target"),
            config.vocab,
            config.prompt_len..=config.prompt_len,
        );
        let layer = stream(seed, "edit-layer").random_range(0..config.layers);
        let plan = ScenarioPlan {
            prompt,
            edit_layer: layer,
            plant_layer: Some(layer),
            target: None,
        };
        Ok((clean, plan))
    }

    /// Scenario around a given model and prompt.
    ///
    /// With `plant_layer` set, a wrong association is planted there first and
    /// the target defaults to the clean prediction. Without it, `target` is
    /// required. The model dimensions in `config` are replaced by the model's.
    ///
    /// # Errors
    ///
    /// Missing target, planting, collection and projector errors.
    pub fn from_plan(
        seed: u64,
        config: &ScenarioConfig,
        clean: ToyPlanner,
        plan: ScenarioPlan,
    ) -> Result<Self> {
        let mut cfg = config.clone();
        let pc = clean.config();
        cfg.d_model = pc.d_model;
        cfg.d_hidden = pc.d_hidden;
        cfg.vocab = pc.vocab;
        cfg.layers = pc.layers;
        cfg.validate()?;
        clean.check_layer(plan.edit_layer)?;
        let ScenarioPlan {
            prompt,
            edit_layer: layer,
            plant_layer,
            target,
        } = plan;
        let clean_top = clean.forward(&prompt)?.argmax();
        let (planted, correct_token, wrong_token) = match plant_layer {
            Some(pl) => {
                let p = plant_any(&clean, &prompt, pl, cfg.margin, 0)?;
                let token = p.token;
                (p.model, target.unwrap_or(clean_top), token)
            }
            None => {
                let t = target.ok_or_else(|| {
                    MetricsError::InvalidParameter(
                        "a target token is required without planting".into(),
                    )
                })?;
                (clean.clone(), t, clean_top)
            }
        };
        if correct_token >= cfg.vocab {
            return Err(MetricsError::InvalidParameter(format!(
                "target token {correct_token} out of range for vocabulary of {}",
                cfg.vocab
            )));
        }

        let mut rng = stream(seed, "preserved");
        let preserved = prefix_corpus(&mut rng, &cfg, cfg.preserved_target(), &prompt);
        let holdout_min = (cfg.holdout_fraction * preserved.len() as f64).ceil() as usize;
        let heldout = prefix_corpus(&mut rng, &cfg, holdout_min.max(1), &prompt);

        let k0 = collect_keys(&planted, &preserved, layer)?;
        let k0_heldout = collect_keys(&planted, &heldout, layer)?;
        let acc = CovarianceAccumulator::from_keys(&k0)?;
        let projector = build_projector(&acc, cfg.cutoff)?;
        Ok(Self {
            seed,
            config: cfg,
            clean,
            planted,
            layer,
            prompt,
            correct_token,
            wrong_token,
            preserved,
            k0,
            heldout,
            k0_heldout,
            projector,
        })
    }

    /// Correct the planted association and score the result.
    ///
    /// When the edited model still misses the target, `v*` is solved again
    /// with double the margin, up to [`V_STAR_ATTEMPTS`] solves.
    ///
    /// # Errors
    ///
    /// Editor errors such as a degenerate key; model errors.
    pub fn run(&self, mode: EditMode) -> Result<ScenarioOutcome> {
        let m = &self.planted;
        let key = m.forward(&self.prompt)?.final_key(self.layer).to_vec();
        let w2 = m.block(self.layer).w2();
        let mut margin = self.config.margin;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let tv = solve_target_value(m, &self.prompt, self.correct_token, self.layer, margin)?;
            let req = EditRequest::new(key.clone(), tv.value.clone())?;
            let res = match mode {
                EditMode::Constrained => rank_one_edit(w2, &req, &self.projector, self.config.tau)?,
                EditMode::Naive => naive_edit(w2, &req)?,
            };
            let edited = apply_edit(m, self.layer, &res.delta)?;
            let hit = edited.forward(&self.prompt)?.argmax() == self.correct_token;
            if hit || attempts == V_STAR_ATTEMPTS {
                let target = EditTarget {
                    prompt: &self.prompt,
                    token: self.correct_token,
                    value: &tv.value,
                };
                let report = verify_edit(
                    m,
                    &edited,
                    self.layer,
                    &res.delta,
                    &self.k0_heldout,
                    &target,
                    &self.preserved,
                )?;
                return Ok(ScenarioOutcome {
                    mode,
                    report,
                    heldout_drift: drift(m, &edited, &self.heldout)?,
                    delta: res.delta,
                    value: tv.value,
                    attempts,
                    edited,
                });
            }
            margin *= 2.0;
        }
    }
}
