//! Track persistence, external tracker import, frame sampling, manifests and
//! the synthetic motion dataset.

mod external;
mod format;
mod frames;
mod manifest;
mod source;
pub mod synthetic;
mod video;

use std::path::PathBuf;

use thiserror::Error;

use crate::track::TrackError;

pub use external::{import_external_tracks, AxisOrder, ImportReport, LayoutDescriptor};
pub use format::{decode_tracks, encode_tracks, read_tracks, write_tracks, TRACK_FILE_MAGIC, TRACK_FILE_VERSION};
pub use frames::{sample_frames, FrameSampling};
pub use manifest::{filter_ambiguous_classes, ClassRemap, DatasetManifest, ManifestEntry, Split};
pub use source::{InMemorySource, ManifestSource, SampleSource};
pub use synthetic::{generate_synthetic_sample, ClassSet, MotionClass, SyntheticDataset, SyntheticSceneSpec};
pub use video::{read_frames, write_frame_stack};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad track file: {0}")]
    Format(String),
    #[error("track file size mismatch: header implies {expected} bytes, found {found}")]
    SizeMismatch { expected: u64, found: u64 },
    #[error("unsupported track file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("layout descriptor: {0}")]
    Descriptor(String),
    #[error("non-finite coordinates at points {points:?}")]
    NonFinite { points: Vec<usize> },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("scene: {0}")]
    Scene(String),
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    Track(#[from] TrackError),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }
}
