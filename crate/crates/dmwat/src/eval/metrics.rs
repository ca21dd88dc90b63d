//! Multi-class metrics: accuracy, per-class precision/recall/F1, macro
//! averages, and fold aggregation as mean +/- population standard deviation.

use crate::data::ReferralDecision;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_class: [ClassCounts; 3],
    pub total: usize,
}

impl ConfusionCounts {
    pub fn from_pairs(
        preds: &[ReferralDecision],
        labels: &[ReferralDecision],
    ) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "metrics: {} predictions vs {} labels",
                preds.len(),
                labels.len()
            )));
        }
        if preds.is_empty() {
            return Err(Error::InvalidArgument("metrics: empty input".into()));
        }
        let mut per_class = [ClassCounts::default(); 3];
        for (p, l) in preds.iter().zip(labels) {
            for (c, counts) in per_class.iter_mut().enumerate() {
                match (p.index() == c, l.index() == c) {
                    (true, true) => counts.tp += 1,
                    (true, false) => counts.fp += 1,
                    (false, true) => counts.fn_ += 1,
                    (false, false) => counts.tn += 1,
                }
            }
        }
        Ok(ConfusionCounts {
            per_class,
            total: preds.len(),
        })
    }

    /// Per-class counts always partition the sample set.
    pub fn check_partition(&self) -> bool {
        self.per_class
            .iter()
            .all(|c| c.tp + c.fp + c.fn_ + c.tn == self.total)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: [ClassMetrics; 3],
    pub confusion: ConfusionCounts,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(
    preds: &[ReferralDecision],
    labels: &[ReferralDecision],
) -> Result<MetricsReport> {
    let confusion = ConfusionCounts::from_pairs(preds, labels)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    let mut per_class = [ClassMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    }; 3];
    for (c, counts) in confusion.per_class.iter().enumerate() {
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class[c] = ClassMetrics {
            precision,
            recall,
            f1,
        };
    }
    Ok(MetricsReport {
        n: confusion.total,
        accuracy: correct as f64 / confusion.total as f64,
        macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / 3.0,
        macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / 3.0,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / 3.0,
        per_class,
        confusion,
    })
}

/// Headline numbers aggregated over folds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AggregateStats {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSummary {
    pub per_fold: Vec<MetricsReport>,
    pub mean: AggregateStats,
    /// Population standard deviation across folds.
    pub std: AggregateStats,
}

pub fn summarize_folds(per_fold: Vec<MetricsReport>) -> Result<FoldSummary> {
    if per_fold.is_empty() {
        return Err(Error::InvalidArgument("no fold reports to summarize".into()));
    }
    let pick = |f: fn(&MetricsReport) -> f64| -> (f64, f64) {
        let values: Vec<f64> = per_fold.iter().map(f).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / values.len() as f64;
        (mean, var.sqrt())
    };
    let (acc_m, acc_s) = pick(|m| m.accuracy);
    let (p_m, p_s) = pick(|m| m.macro_precision);
    let (r_m, r_s) = pick(|m| m.macro_recall);
    let (f_m, f_s) = pick(|m| m.macro_f1);
    Ok(FoldSummary {
        per_fold,
        mean: AggregateStats {
            accuracy: acc_m,
            macro_precision: p_m,
            macro_recall: r_m,
            macro_f1: f_m,
        },
        std: AggregateStats {
            accuracy: acc_s,
            macro_precision: p_s,
            macro_recall: r_s,
            macro_f1: f_s,
        },
    })
}
