//! ROC analysis: AUC and the sensitivity/specificity operating point.
//!
//! Labels are booleans with `true` meaning positive. Equal scores are grouped
//! into a single threshold step, so results never depend on input order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no positive examples")]
    NoPositives,
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Descending; the first entry is +inf (nothing predicted positive).
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    /// `None` when there are no negatives.
    pub specificity: Option<f64>,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(i));
    }
    Ok(())
}

/// Cumulative (true positive, false positive) counts after each distinct
/// score, visiting scores from high to low.
fn threshold_steps(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut steps: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            steps.push((scores[i], tp, fp));
        }
    }
    steps
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, MetricsError> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    let rate = |count: usize, total: usize| if total == 0 { 0.0 } else { count as f64 / total as f64 };
    let mut curve = RocCurve {
        thresholds: vec![f64::INFINITY],
        tpr: vec![0.0],
        fpr: vec![0.0],
    };
    for (threshold, tp, fp) in threshold_steps(scores, labels) {
        curve.thresholds.push(threshold);
        curve.tpr.push(rate(tp, pos));
        curve.fpr.push(rate(fp, neg));
    }
    Ok(curve)
}

/// Trapezoidal ROC area, i.e. P(s+ > s-) + 0.5 P(s+ = s-).
///
/// Returns `Ok(None)` when either class is absent.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>, MetricsError> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    // Accumulate in counts; each step adds a trapezoid of width dfp and
    // heights tp_prev, tp.
    let mut area2 = 0u128;
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    for (_, tp, fp) in threshold_steps(scores, labels) {
        area2 += ((fp - prev_fp) * (tp + prev_tp)) as u128;
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok(Some(area2 as f64 / (2.0 * pos as f64 * neg as f64)))
}

/// Largest threshold whose sensitivity reaches `target`, with the
/// specificity obtained there. A sample is called positive when
/// `score >= threshold`.
pub fn sens_spec_at(scores: &[f64], labels: &[bool], target: f64) -> Result<OperatingPoint, MetricsError> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    let steps = threshold_steps(scores, labels);
    let &(threshold, tp, fp) = steps
        .iter()
        .find(|&&(_, tp, _)| tp as f64 / pos as f64 >= target)
        .unwrap_or_else(|| steps.last().expect("positives present"));
    Ok(OperatingPoint {
        threshold,
        sensitivity: tp as f64 / pos as f64,
        specificity: (neg > 0).then(|| (neg - fp) as f64 / neg as f64),
    })
}
