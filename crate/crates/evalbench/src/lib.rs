//! Accuracy metrics, reports with explicit spread semantics, and the four
//! experiment protocols: tracks versus no tracks, point-count ablation,
//! background filtering, and single-image input.

pub mod experiments;
pub mod metrics;
mod plot;
pub mod report;

use std::path::PathBuf;

pub use experiments::{
    ablation_curve, run_kde_experiment, run_kde_pipeline, run_point_ablation, run_single_image, run_track_vs_notrack,
    train_variants, write_ablation_plot, KdeExperiment, Setup, TrainedVariant, Variant,
};
pub use metrics::{bootstrap_interval, class_spread, rank_of, topk_accuracy};
pub use report::{Accuracy, EvalReport, SampleRecord, VariantRow};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Train(#[from] trec_train::TrainError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("plot: {0}")]
    Plot(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EvalError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EvalError::Io { path: path.into(), source }
    }
}
