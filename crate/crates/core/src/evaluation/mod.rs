//! Per-scene metrics and their aggregation into benchmark tables.
//!
//! Scores of different scenes live on independent scales, so every metric
//! is computed inside one scene and scenes are combined by the median.

mod harness;
mod histogram;
mod metrics;
mod table;

pub use harness::{evaluate_results, predict_images, Evaluation, ImageResult, SceneHistogram};
pub use histogram::class_distribution_histogram;
pub use metrics::{
    average_ranks, averaged_correlation, compute_scene_metrics, kendall_tau_b, median_across_scenes,
    median_with, pearson, spearman, MedianRule, MetricRecord, SceneMetrics,
};
pub use table::{
    build_benchmark_table, read_metric_records, write_averaged_csv, write_histogram_csv,
    write_metric_records, BenchmarkTable, MetricSummary, METRIC_RECORD_HEADER,
};
