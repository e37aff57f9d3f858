// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-layer score table and the combined ranking.

use std::fmt::Write as _;

use crate::{Result, TraceError};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerScores {
    pub layer: usize,
    pub impact_mean: f64,
    pub impact_std: f64,
    pub probe_accuracy: Option<f64>,
    pub grad_norm: Option<f64>,
    /// Trials behind the impact statistics.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpactProfile {
    pub layers: Vec<LayerScores>,
}

/// Weights of the three methods in [`rank_layers`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankWeights {
    pub ie: f64,
    pub probe: f64,
    pub grad: f64,
}

impl Default for RankWeights {
    fn default() -> Self {
        Self {
            ie: 1.0,
            probe: 1.0,
            grad: 1.0,
        }
    }
}

const CSV_HEADER: &str = "layer,impact_mean,impact_std,probe_acc,grad_norm";
const BAR_WIDTH: usize = 40;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl ImpactProfile {
    /// Layer with the largest mean impact; lowest index on ties.
    pub fn argmax_impact(&self) -> Option<usize> {
        let mut best: Option<&LayerScores> = None;
        for l in &self.layers {
            if best.map_or(true, |b| l.impact_mean > b.impact_mean) {
                best = Some(l);
            }
        }
        best.map(|l| l.layer)
    }

    /// One row per layer; missing scores are empty fields.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{},{}",
                l.layer,
                l.impact_mean,
                l.impact_std,
                opt(l.probe_accuracy),
                opt(l.grad_norm)
            );
        }
        s
    }

    /// Fixed-width bar chart of mean impact.
    pub fn bar_chart(&self) -> String {
        let peak = self
            .layers
            .iter()
            .map(|l| l.impact_mean.abs())
            .fold(0.0, f64::max);
        let mut s = String::new();
        for l in &self.layers {
            let len = if peak > 0.0 {
                ((l.impact_mean.max(0.0) / peak) * BAR_WIDTH as f64).round() as usize
            } else {
                0
            };
            let _ = writeln!(
                s,
                "L{:>3} |{:<width$}| {:+.4}",
                l.layer,
                "#".repeat(len),
                l.impact_mean,
                width = BAR_WIDTH
            );
        }
        s
    }
}

fn min_max(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; xs.len()]
    }
}

/// Layers sorted by `Σ weight · minmax(score)`, best first; ties go to the
/// lower layer index. A constant score normalizes to zero.
///
/// # Errors
///
/// [`TraceError::InvalidWeights`] for negative, non-finite or all-zero
/// weights; [`TraceError::MissingScores`] when a weighted method has no
/// values.
pub fn rank_layers(profile: &ImpactProfile, weights: RankWeights) -> Result<Vec<usize>> {
    let w = [weights.ie, weights.probe, weights.grad];
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().all(|&x| x == 0.0) {
        return Err(TraceError::InvalidWeights(format!("{w:?}")));
    }
    let ls = &profile.layers;
    let mut total = vec![0.0; ls.len()];
    let columns: [(&'static str, f64, Box<dyn Fn(&LayerScores) -> Option<f64>>); 3] = [
        ("impact", weights.ie, Box::new(|l| Some(l.impact_mean))),
        ("probe", weights.probe, Box::new(|l| l.probe_accuracy)),
        ("gradient", weights.grad, Box::new(|l| l.grad_norm)),
    ];
    for (name, weight, get) in columns {
        if weight == 0.0 {
            continue;
        }
        let vals = ls
            .iter()
            .map(|l| get(l).ok_or(TraceError::MissingScores(name)))
            .collect::<Result<Vec<f64>>>()?;
        for (t, v) in total.iter_mut().zip(min_max(&vals)) {
            *t += weight * v;
        }
    }
    let mut order: Vec<usize> = (0..ls.len()).collect();
    order.sort_by(|&a, &b| {
        total[b]
            .total_cmp(&total[a])
            .then(ls[a].layer.cmp(&ls[b].layer))
    });
    Ok(order.into_iter().map(|i| ls[i].layer).collect())
}
