//! TRec network: a per-frame CNN encoder and a track projection feed one
//! transformer, whose class token drives attention pooling and an MLP head.

pub mod config;
mod fused;
pub mod layers;
pub mod network;
pub mod params;
pub mod preprocess;

use std::path::PathBuf;

pub use config::{EncoderConfig, Mode, ModelConfig};
pub use network::{checkpoint_config, cross_entropy, ModelInput, TokenKind, TokenSequence, TrecModel};
pub use params::{ParamGroup, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("{tokens} tokens exceed the capacity of {max}")]
    Capacity { tokens: usize, max: usize },
    #[error("checkpoint config does not match: stored {stored:?}, expected {expected:?}")]
    ConfigMismatch { stored: Box<ModelConfig>, expected: Box<ModelConfig> },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Track(#[from] trec_core::TrackError),
}
