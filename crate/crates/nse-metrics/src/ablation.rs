// SPDX-License-Identifier: MIT OR Apache-2.0

//! Constrained versus naive edits on paired scenarios.

use std::fmt::Write as _;

use nse_toymodel::seed::trial_seed;

use crate::report::EditReport;
use crate::scenario::{EditMode, EditScenario, ScenarioConfig};
use crate::{MetricsError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPair {
    pub seed: u64,
    pub constrained: EditReport,
    pub naive: EditReport,
    /// Naive over constrained constraint residual (infinite when the
    /// constrained residual is 0 and the naive one is not).
    pub residual_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub pairs: Vec<AblationPair>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl AblationSummary {
    fn column(&self, f: impl Fn(&AblationPair) -> f64) -> f64 {
        mean(self.pairs.iter().map(f))
    }

    pub fn mean_constraint_residual(&self) -> (f64, f64) {
        (
            self.column(|p| p.constrained.constraint_residual_rel),
            self.column(|p| p.naive.constraint_residual_rel),
        )
    }

    pub fn mean_drift(&self) -> (f64, f64) {
        (
            self.column(|p| p.constrained.preserved_argmax_drift),
            self.column(|p| p.naive.preserved_argmax_drift),
        )
    }

    pub fn mean_kl(&self) -> (f64, f64) {
        (
            self.column(|p| p.constrained.preserved_kl_mean),
            self.column(|p| p.naive.preserved_kl_mean),
        )
    }

    pub fn success_rate(&self) -> (f64, f64) {
        (
            self.column(|p| f64::from(u8::from(p.constrained.edit_succeeded))),
            self.column(|p| f64::from(u8::from(p.naive.edit_succeeded))),
        )
    }

    /// Fraction of pairs whose residual ratio is at least `factor`.
    pub fn ratio_at_least(&self, factor: f64) -> f64 {
        self.column(|p| f64::from(u8::from(p.residual_ratio >= factor)))
    }

    /// Fraction of pairs where naive drift is at least constrained drift.
    pub fn naive_drift_not_lower(&self) -> f64 {
        self.column(|p| {
            f64::from(u8::from(
                p.naive.preserved_argmax_drift >= p.constrained.preserved_argmax_drift,
            ))
        })
    }

    /// Sorted residual ratios.
    pub fn ratios(&self) -> Vec<f64> {
        let mut r: Vec<f64> = self.pairs.iter().map(|p| p.residual_ratio).collect();
        r.sort_by(f64::total_cmp);
        r
    }

    pub fn to_table(&self) -> String {
        let rows = [
            ("constraint_residual_rel", self.mean_constraint_residual()),
            ("preserved_argmax_drift", self.mean_drift()),
            ("preserved_kl_mean", self.mean_kl()),
            ("edit_success_rate", self.success_rate()),
        ];
        let mut s = format!("{:<26}{:>14}{:>14}\n", "metric", "constrained", "naive");
        for (name, (c, n)) in rows {
            let _ = writeln!(s, "{name:<26}{c:>14.4e}{n:>14.4e}");
        }
        let r = self.ratios();
        if let (Some(lo), Some(hi)) = (r.first(), r.last()) {
            let _ = writeln!(
                s,
                "residual ratio naive/constrained: min {lo:.3e} median {:.3e} max {hi:.3e} over {} pairs",
                r[r.len() / 2],
                r.len()
            );
        }
        s
    }
}

/// Paired constrained and naive edits on `trials` scenarios seeded by
/// `trial_seed(seed, t)`.
///
/// # Errors
///
/// [`MetricsError::InvalidParameter`] for zero trials; scenario errors.
pub fn ablation_compare(
    seed: u64,
    trials: usize,
    config: &ScenarioConfig,
) -> Result<AblationSummary> {
    if trials == 0 {
        return Err(MetricsError::InvalidParameter(
            "trials must be at least 1".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(trials);
    for t in 0..trials {
        let s = trial_seed(seed, t as u64);
        let sc = EditScenario::build(s, config)?;
        let constrained = sc.run(EditMode::Constrained)?.report;
        let naive = sc.run(EditMode::Naive)?.report;
        let (c, n) = (
            constrained.constraint_residual_rel,
            naive.constraint_residual_rel,
        );
        let residual_ratio = if c > 0.0 {
            n / c
        } else if n > 0.0 {
            f64::INFINITY
        } else {
            1.0
        };
        pairs.push(AblationPair {
            seed: s,
            constrained,
            naive,
            residual_ratio,
        });
    }
    Ok(AblationSummary { pairs })
}
