// SPDX-License-Identifier: MIT OR Apache-2.0

//! Corrupt-and-restore indirect effect.

use nse_tensor::Matrix;
use nse_toymodel::seed::{rng, trial_seed};
use nse_toymodel::{Intervention, ModelError, Restore, Site, ToyPlanner};
use rand_distr::{Distribution, Normal};

use crate::rank::{ImpactProfile, LayerScores};
use crate::{Result, TraceError};

/// Which activation a restoration overwrites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RestoreSite {
    /// The block's MLP activation (its key). Restoring it replays exactly
    /// the block's own contribution, which is where a planted association
    /// lives.
    #[default]
    Key,
    /// The residual stream after the block.
    Hidden,
}

impl From<RestoreSite> for Site {
    fn from(s: RestoreSite) -> Self {
        match s {
            RestoreSite::Key => Site::Key,
            RestoreSite::Hidden => Site::Hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceConfig {
    /// Noise std as a multiple of the embedding std. Zero disables noise.
    pub noise_sigma_scale: f64,
    pub trials: usize,
    pub seed: u64,
    /// Positions to corrupt and restore; `None` means all.
    pub subject_positions: Option<Vec<usize>>,
    pub site: RestoreSite,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            noise_sigma_scale: 3.0,
            trials: 10,
            seed: 0,
            subject_positions: None,
            site: RestoreSite::Key,
        }
    }
}

impl TraceConfig {
    /// # Errors
    ///
    /// [`TraceError::InvalidConfig`] for a negative or non-finite scale or
    /// zero trials.
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma_scale.is_finite() && self.noise_sigma_scale >= 0.0) {
            return Err(TraceError::InvalidConfig(format!(
                "noise_sigma_scale must be finite and non-negative, got {}",
                self.noise_sigma_scale
            )));
        }
        if self.trials == 0 {
            return Err(TraceError::InvalidConfig(
                "trials must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Population std of all embedding entries.
pub fn embedding_std(model: &ToyPlanner) -> f64 {
    let d = model.embed().data();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-layer `p_restored(target) − p_corrupted(target)` over seeded trials.
///
/// Trial `t` draws its noise from `trial_seed(cfg.seed, t)`; entries are
/// filled position by position, then coordinate by coordinate, for the
/// subject positions only. The profile carries impact scores only.
///
/// # Errors
///
/// Config, token and position errors.
pub fn causal_impact(
    model: &ToyPlanner,
    prompt: &[usize],
    target: usize,
    cfg: &TraceConfig,
) -> Result<ImpactProfile> {
    cfg.validate()?;
    model.check_tokens(prompt)?;
    let vocab = model.config().vocab;
    if target >= vocab {
        return Err(ModelError::TokenOutOfRange {
            token: target,
            vocab,
        }
        .into());
    }
    let n = prompt.len();
    let positions: Vec<usize> = match &cfg.subject_positions {
        Some(p) => {
            if let Some(&pos) = p.iter().find(|&&i| i >= n) {
                return Err(ModelError::PositionOutOfRange { pos, len: n }.into());
            }
            p.clone()
        }
        None => (0..n).collect(),
    };
    let sigma = cfg.noise_sigma_scale * embedding_std(model);
    let dm = model.config().d_model;
    let layers = model.layers();
    let clean = model.forward(prompt)?;

    let mut per_layer = vec![Vec::with_capacity(cfg.trials); layers];
    for t in 0..cfg.trials {
        let mut noise = Matrix::zeros(n, dm);
        if sigma > 0.0 {
            let dist =
                Normal::new(0.0, sigma).map_err(|e| TraceError::InvalidConfig(e.to_string()))?;
            let mut r = rng(trial_seed(cfg.seed, t as u64));
            for &p in &positions {
                for x in noise.row_mut(p) {
                    *x = dist.sample(&mut r);
                }
            }
        }
        let corrupted_iv = Intervention {
            embed_noise: Some(&noise),
            ..Intervention::default()
        };
        let p_corrupted = model.forward_with(prompt, &corrupted_iv)?.probs[target];
        for (layer, out) in per_layer.iter_mut().enumerate() {
            let iv = Intervention {
                embed_noise: Some(&noise),
                restores: vec![Restore {
                    site: cfg.site.into(),
                    layer,
                    positions: &positions,
                    source: &clean,
                }],
                forced_output: None,
            };
            let p_restored = model.forward_with(prompt, &iv)?.probs[target];
            out.push(p_restored - p_corrupted);
        }
    }

    let layers = per_layer
        .iter()
        .enumerate()
        .map(|(layer, xs)| {
            let (impact_mean, impact_std) = mean_std(xs);
            LayerScores {
                layer,
                impact_mean,
                impact_std,
                probe_accuracy: None,
                grad_norm: None,
                samples: xs.len(),
            }
        })
        .collect();
    Ok(ImpactProfile { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nse_toymodel::{init_planner, PlannerConfig};

    #[test]
    fn rejects_bad_config() {
        let mut c = TraceConfig::default();
        c.trials = 0;
        assert!(c.validate().is_err());
        c.trials = 1;
        c.noise_sigma_scale = -1.0;
        assert!(c.validate().is_err());
        c.noise_sigma_scale = f64::NAN;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_noise_zero_impact() {
        let m = init_planner(&PlannerConfig::default()).unwrap();
        let cfg = TraceConfig {
            noise_sigma_scale: 0.0,
            trials: 3,
            ..TraceConfig::default()
        };
        let prof = causal_impact(&m, &[1, 2, 3], 5, &cfg).unwrap();
        assert_eq!(prof.layers.len(), 8);
        assert!(prof
            .layers
            .iter()
            .all(|l| l.impact_mean == 0.0 && l.impact_std == 0.0));
        assert!(causal_impact(&m, &[1, 2, 3], 64, &cfg).is_err());
        let bad = TraceConfig {
            subject_positions: Some(vec![3]),
            ..cfg
        };
        assert!(causal_impact(&m, &[1, 2, 3], 5, &bad).is_err());
    }

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
