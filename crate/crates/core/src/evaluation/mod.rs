//! Pixel metrics, threshold sweeps, latency profiling and report tables.

mod latency;
mod metrics;
pub mod reference;
mod report;
mod sweep;

pub use latency::{latency_profile, timed, LatencyReport, ProfiledPipeline, StageLatency};
pub use metrics::{
    binary_confusion, class_label, confusion, evaluate, f1_iou, macro_scores, mean, Averaging, ClassScore,
    ConfusionCounts, EvalReport, MacroScores,
};
pub use report::{eval_csv, eval_table, sweep_csv, sweep_table};
pub use sweep::{pooled_confusion, sweep, SweepRow, SweepSample, SweepStage};
