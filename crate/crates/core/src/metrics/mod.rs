//! Ranking and threshold metrics, grouped evaluation reports, and the
//! gate-weight versus expert-AUROC analysis.

mod analysis;
mod report;

pub use analysis::{router_auroc_correlation, AnalysisReport, ExpertAnalysis};
pub use report::{evaluate, Cell, EvalReport, GroupBy, StrategyRow, ALL_GROUP};

use serde::{Deserialize, Serialize};

use crate::corpus::{ClassLabel, DomainId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub score: f64,
    pub label: ClassLabel,
    pub domain: DomainId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

fn split_scores(scores: &[f64], labels: &[ClassLabel]) -> Result<(Vec<f64>, Vec<f64>)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let mut machine = Vec::new();
    let mut human = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        match l {
            ClassLabel::Machine => machine.push(s),
            ClassLabel::Human => human.push(s),
        }
    }
    if machine.is_empty() || human.is_empty() {
        return Err(Error::Undefined("both classes are required"));
    }
    Ok((machine, human))
}

/// Probability that a random machine document outscores a random human one,
/// ties at half credit. Computed from midranks in exact integer arithmetic,
/// so it equals the pairwise definition bit for bit.
pub fn auroc_scores(scores: &[f64], labels: &[ClassLabel]) -> Result<f64> {
    split_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut n_machine: u128 = 0;
    // sum over machine documents of twice their 1-based midrank
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let machines = order[start..end]
            .iter()
            .filter(|&&i| labels[i] == ClassLabel::Machine)
            .count() as u128;
        twice_rank_sum += machines * (start as u128 + 1 + end as u128);
        n_machine += machines;
        start = end;
    }
    let n_human = scores.len() as u128 - n_machine;
    let twice_u = twice_rank_sum - n_machine * (n_machine + 1);
    Ok(twice_u as f64 / (2 * n_machine * n_human) as f64)
}

pub fn auroc(records: &[EvalRecord]) -> Result<f64> {
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let labels: Vec<ClassLabel> = records.iter().map(|r| r.label).collect();
    auroc_scores(&scores, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TprAtFpr {
    pub tpr: f64,
    /// `f64::INFINITY` when no finite threshold meets the target.
    pub threshold: f64,
    pub fpr: f64,
}

/// Detection rate at the smallest threshold, among observed scores and
/// `+inf`, whose human false-positive fraction (`score >= t`) is at most
/// `target_fpr`.
pub fn tpr_at_fpr_scores(
    scores: &[f64],
    labels: &[ClassLabel],
    target_fpr: f64,
) -> Result<TprAtFpr> {
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::invalid(format!(
            "target FPR must lie in (0, 1), got {target_fpr}"
        )));
    }
    let (mut machine, mut human) = split_scores(scores, labels)?;
    machine.sort_by(f64::total_cmp);
    human.sort_by(f64::total_cmp);
    let at_or_above = |sorted: &[f64], t: f64| sorted.len() - sorted.partition_point(|&s| s < t);
    let n_h = human.len() as f64;
    let n_m = machine.len() as f64;

    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates.push(f64::INFINITY);
    // FPR is nonincreasing in the threshold: binary search the first feasible one
    let first = candidates.partition_point(|&t| at_or_above(&human, t) as f64 / n_h > target_fpr);
    let threshold = candidates[first];
    Ok(TprAtFpr {
        tpr: at_or_above(&machine, threshold) as f64 / n_m,
        threshold,
        fpr: at_or_above(&human, threshold) as f64 / n_h,
    })
}

pub fn tpr_at_fpr(records: &[EvalRecord], target_fpr: f64) -> Result<TprAtFpr> {
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let labels: Vec<ClassLabel> = records.iter().map(|r| r.label).collect();
    tpr_at_fpr_scores(&scores, &labels, target_fpr)
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Undefined("pearson needs at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
