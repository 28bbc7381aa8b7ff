//! Metrics, cross-domain gaps, stage-cost accounting and report output.
//!
//! Metrics are stored as fractions and rendered as percentages with two
//! decimals. Zero denominators give 0: precision when nothing was predicted
//! positive, recall when nothing is gold positive, and F1 when both are 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::{EscalationReason, RoutingDecision};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::util::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Positive class is `Suicide`.
pub fn confusion(preds: &[Label], gold: &[Label]) -> Result<ConfusionCounts> {
    if preds.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: gold.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut c = ConfusionCounts::default();
    for (p, g) in preds.iter().zip(gold) {
        match (p.is_positive(), g.is_positive()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(c: &ConfusionCounts) -> Result<MetricSet> {
    if c.total() == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricSet {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1,
    })
}

pub fn evaluate(preds: &[Label], gold: &[Label]) -> Result<MetricSet> {
    metrics(&confusion(preds, gold)?)
}

pub fn f1_score(preds: &[Label], gold: &[Label]) -> Result<f64> {
    Ok(evaluate(preds, gold)?.f1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub delta_rec: f64,
    pub delta_f1: f64,
    pub avg_gap: f64,
}

/// Absolute recall and F1 differences between two domains, and their mean.
pub fn cross_domain_gap(a: &MetricSet, b: &MetricSet) -> GapReport {
    let delta_rec = (a.recall - b.recall).abs();
    let delta_f1 = (a.f1 - b.f1).abs();
    GapReport {
        delta_rec,
        delta_f1,
        avg_gap: (delta_rec + delta_f1) / 2.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReasonShare {
    pub count: usize,
    /// Share of all escalations.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCostReport {
    pub total: usize,
    pub stage1_fraction: f64,
    pub stage2_fraction: f64,
    /// Only reasons that occurred are listed.
    pub escalations: BTreeMap<EscalationReason, ReasonShare>,
}

pub fn stage_cost_report(decisions: &[RoutingDecision]) -> Result<StageCostReport> {
    if decisions.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut counts: BTreeMap<EscalationReason, usize> = BTreeMap::new();
    for d in decisions {
        if let RoutingDecision::Escalate { reason, .. } = d {
            *counts.entry(*reason).or_default() += 1;
        }
    }
    let escalated: usize = counts.values().sum();
    let accepted = decisions.len() - escalated;
    Ok(StageCostReport {
        total: decisions.len(),
        stage1_fraction: ratio(accepted, decisions.len()),
        stage2_fraction: ratio(escalated, decisions.len()),
        escalations: counts
            .into_iter()
            .map(|(r, count)| {
                (
                    r,
                    ReasonShare {
                        count,
                        fraction: ratio(count, escalated),
                    },
                )
            })
            .collect(),
    })
}

/// One line of the jsonl report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub dataset: String,
    pub method: String,
    pub metrics: MetricSet,
    /// Gap against the first dataset evaluated with the same method.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gaps: Option<GapReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cost: Option<StageCostReport>,
}

/// Fills `gaps` on every record whose method was already seen on an earlier
/// dataset, measured against that first dataset.
pub fn attach_gaps(records: &mut [ReportRecord]) {
    let mut reference: BTreeMap<String, MetricSet> = BTreeMap::new();
    for r in records.iter_mut() {
        match reference.get(&r.method) {
            Some(first) => r.gaps = Some(cross_domain_gap(first, &r.metrics)),
            None => {
                reference.insert(r.method.clone(), r.metrics);
            }
        }
    }
}

pub fn report_jsonl(records: &[ReportRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("report serializes") + "\n")
        .collect()
}

pub fn write_report(path: &Path, records: &[ReportRecord]) -> Result<()> {
    write_atomic(path, report_jsonl(records).as_bytes())
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Fixed-width table; gap and stage-1 columns show `-` when absent.
pub fn render_table(records: &[ReportRecord]) -> String {
    let header = [
        "dataset", "method", "Acc", "Prec", "Rec", "F1", "Stage1%", "dRec", "dF1", "AvgGap",
    ];
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let dash = || "-".to_string();
            vec![
                r.dataset.clone(),
                r.method.clone(),
                pct(r.metrics.accuracy),
                pct(r.metrics.precision),
                pct(r.metrics.recall),
                pct(r.metrics.f1),
                r.cost.as_ref().map_or_else(dash, |c| pct(c.stage1_fraction)),
                r.gaps.map_or_else(dash, |g| pct(g.delta_rec)),
                r.gaps.map_or_else(dash, |g| pct(g.delta_f1)),
                r.gaps.map_or_else(dash, |g| pct(g.avg_gap)),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|j| rows.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (j, c) in cells.iter().enumerate() {
            if j < 2 {
                let _ = write!(s, "{:<w$}  ", c, w = widths[j]);
            } else {
                let _ = write!(s, "{:>w$}  ", c, w = widths[j]);
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for r in &rows {
        line(r.iter().map(String::as_str).collect());
    }
    out
}
