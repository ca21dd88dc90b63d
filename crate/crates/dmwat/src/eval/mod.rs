//! Metrics, cross-validation orchestration, and test-time-augmentation
//! voting.

mod config;
mod cross_validate;
mod metrics;
mod tta;

pub use config::{AugmentationConfig, BalanceMode, EpochsConfig, RunConfig};
pub use cross_validate::{cross_validate, persist_report, ConditionReport, EvaluationReport};
pub use metrics::{
    compute_metrics, summarize_folds, AggregateStats, ClassCounts, ClassMetrics,
    ConfusionCounts, FoldSummary, MetricsReport,
};
pub use tta::{plurality_urgent, tta_majority_vote};
