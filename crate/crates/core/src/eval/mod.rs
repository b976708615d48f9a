//! Ranked-triplet recall metrics, confusion analysis, similarity-shift
//! heatmaps and cost accounting.

pub mod cost;
pub mod heatmap;
pub mod metrics;
pub mod report;

pub use cost::{count_ops, CostReport, OpCount};
pub use heatmap::{grid_csv, parse_grid_csv, Heatmap};
pub use metrics::{
    confusion_rate, confusion_resolution, density_binned, f_at_k, frequent_confusions, k_metrics, mean_recall_at_k,
    per_predicate_recall, recall_at_k, subset_accuracy, BinReport, ConfusionPair, ConfusionRow, KMetrics,
    ScenePredictions,
};
pub use report::{confusion_table, evaluate, predict, MetricsReport, DEFAULT_KS};
