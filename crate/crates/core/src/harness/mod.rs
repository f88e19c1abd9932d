//! Experiment configuration and the collect, train, evaluate, diagnose and
//! plot pipeline.

mod config;
mod metrics;
mod pipeline;
mod plot;

pub use config::{DiagnosticsCadence, ExperimentConfig, ReplayOptions};
pub use metrics::{
    read_metrics, CsvAppender, MetricsRow, Phase, METRICS_HEADER, Q_TRACE_HEADER,
    SIMILARITY_SUMMARY_HEADER, TIMINGS_HEADER,
};
pub use pipeline::{
    collect, diagnose, eval_seeds, evaluate, evaluate_behaviour, expand_grid, run_pipeline, sweep,
    train_offline, train_online, DiagnosticKind, EvalSummary, OfflineOutcome, OnlineOutcome,
    ProbeLog, RunDir, RunStamp, RunSummary, Stage, SweepEntry, FINAL_WINDOW,
};
pub use plot::{plot_csv, PlotKind};
