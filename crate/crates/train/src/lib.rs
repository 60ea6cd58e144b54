//! Optimization for the track-fusion recognizer: learning-rate schedule,
//! decoupled-weight-decay Adam with per-group rates, deterministic batch
//! assembly, and a resumable epoch loop.

pub mod batch;
pub mod config;
pub mod fit;
pub mod optim;
pub mod schedule;

use std::collections::BTreeMap;
use std::path::PathBuf;

pub use batch::{predict, Batch, EvalOptions, KdeStage, Prediction};
pub use config::TrainConfig;
pub use fit::{fit, train_step, FitOptions, FitOutcome, HistoryRecord, TrainState};
pub use optim::AdamW;
pub use schedule::{lr_at, LrSchedule};

use trec_model::ParamGroup;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] trec_model::ModelError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Data(#[from] trec_core::data::DataError),
    #[error(transparent)]
    Track(#[from] trec_core::TrackError),
    #[error(transparent)]
    Augment(#[from] trec_core::augment::AugmentError),
    #[error(transparent)]
    Kde(#[from] trec_core::kde::KdeError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("non-finite loss at step {step} (lr {lr:?}, batch {batch_ids:?}, grad norms {grad_norms:?})")]
    NonFinite { step: u64, batch_ids: Vec<String>, lr: (f64, f64), grad_norms: BTreeMap<ParamGroup, f64> },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TrainError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrainError::Io { path: path.into(), source }
    }
}
