//! Grid search for the Stage-1 accept band on validation data.
//!
//! Each `(tau_low, tau_high)` pair is scored by validation F1 and must keep
//! at least `min_coverage` of posts in Stage 1. When Stage-2 labels for the
//! validation posts are supplied, F1 is that of the whole cascade;
//! otherwise it is the F1 of Stage-1 labels on the accepted subset. Ties go
//! to higher coverage, then to the earlier grid point.

use serde::{Deserialize, Serialize};

use super::{route_tokens, RoutingConfig, RoutingDecision};
use crate::data::{Label, Probability};
use crate::error::{Error, Result};
use crate::eval::f1_score;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub tau_low: Vec<f64>,
    pub tau_high: Vec<f64>,
    pub min_coverage: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            tau_low: vec![0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            tau_high: vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99, 0.995, 0.999],
            min_coverage: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau_low: f64,
    pub tau_high: f64,
    pub f1: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best: RoutingConfig,
    pub f1: f64,
    pub coverage: f64,
    /// Every valid grid pair in evaluation order.
    pub points: Vec<SweepPoint>,
}

/// `max_tokens` is held fixed at `base.max_tokens`.
pub fn sweep_thresholds(
    stage1_probs: &[Probability],
    token_lengths: &[usize],
    gold: &[Label],
    stage2_labels: Option<&[Label]>,
    base: &RoutingConfig,
    grid: &SweepGrid,
) -> Result<SweepResult> {
    let n = gold.len();
    for len in [stage1_probs.len(), token_lengths.len()]
        .into_iter()
        .chain(stage2_labels.map(<[Label]>::len))
    {
        if len != n {
            return Err(Error::LengthMismatch { left: len, right: n });
        }
    }
    if n == 0 {
        return Err(Error::EmptyEvaluation);
    }

    let mut points = Vec::new();
    let mut best: Option<usize> = None;
    for &lo in &grid.tau_low {
        for &hi in &grid.tau_high {
            let Ok(cfg) = RoutingConfig::new(lo, hi, base.max_tokens) else {
                continue;
            };
            let mut accepted = 0;
            let (mut preds, mut golds) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for i in 0..n {
                match route_tokens(token_lengths[i], stage1_probs[i], &cfg) {
                    RoutingDecision::Accept { label, .. } => {
                        accepted += 1;
                        preds.push(label);
                        golds.push(gold[i]);
                    }
                    RoutingDecision::Escalate { .. } => {
                        if let Some(s2) = stage2_labels {
                            preds.push(s2[i]);
                            golds.push(gold[i]);
                        }
                    }
                }
            }
            let coverage = accepted as f64 / n as f64;
            let f1 = if preds.is_empty() { 0.0 } else { f1_score(&preds, &golds)? };
            points.push(SweepPoint {
                tau_low: lo,
                tau_high: hi,
                f1,
                coverage,
            });
            let k = points.len() - 1;
            if coverage >= grid.min_coverage {
                let better = match best {
                    None => true,
                    Some(b) => f1 > points[b].f1 || (f1 == points[b].f1 && coverage > points[b].coverage),
                };
                if better {
                    best = Some(k);
                }
            }
        }
    }
    let b = best.ok_or_else(|| {
        Error::DegenerateData(format!(
            "no threshold pair keeps at least {:.1}% of posts in stage 1",
            100.0 * grid.min_coverage
        ))
    })?;
    let p = &points[b];
    Ok(SweepResult {
        best: RoutingConfig::new(p.tau_low, p.tau_high, base.max_tokens)?,
        f1: p.f1,
        coverage: p.coverage,
        points,
    })
}
