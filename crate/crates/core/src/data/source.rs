use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{read_frames, read_tracks, DataError, DatasetManifest};
use crate::track::VideoSample;

/// Indexed access to labelled clips.
pub trait SampleSource: Send + Sync {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<Arc<VideoSample>, DataError>;
    fn label(&self, index: usize) -> usize;
    fn id(&self, index: usize) -> &str;
    fn class_names(&self) -> &[String];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn num_classes(&self) -> usize {
        self.class_names().len()
    }
}

#[derive(Clone, Debug)]
pub struct InMemorySource {
    samples: Vec<Arc<VideoSample>>,
    class_names: Vec<String>,
}

impl InMemorySource {
    pub fn new(samples: Vec<VideoSample>, class_names: Vec<String>) -> Result<Self, DataError> {
        if let Some(s) = samples.iter().find(|s| s.label >= class_names.len()) {
            return Err(DataError::Argument(format!("sample {} has label {} of {}", s.id, s.label, class_names.len())));
        }
        Ok(Self { samples: samples.into_iter().map(Arc::new).collect(), class_names })
    }

    pub fn samples(&self) -> &[Arc<VideoSample>] {
        &self.samples
    }
}

impl SampleSource for InMemorySource {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn get(&self, index: usize) -> Result<Arc<VideoSample>, DataError> {
        Ok(Arc::clone(&self.samples[index]))
    }

    fn label(&self, index: usize) -> usize {
        self.samples[index].label
    }

    fn id(&self, index: usize) -> &str {
        &self.samples[index].id
    }

    fn class_names(&self) -> &[String] {
        &self.class_names
    }
}

/// Reads clips listed in a manifest; relative paths resolve against `root`.
#[derive(Clone, Debug)]
pub struct ManifestSource {
    manifest: DatasetManifest,
    root: PathBuf,
}

impl ManifestSource {
    pub fn new(manifest: DatasetManifest, root: impl Into<PathBuf>) -> Self {
        Self { manifest, root: root.into() }
    }

    /// Loads a manifest file, resolving entries against its directory.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let manifest = DatasetManifest::load(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, root })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

impl SampleSource for ManifestSource {
    fn len(&self) -> usize {
        self.manifest.len()
    }

    fn get(&self, index: usize) -> Result<Arc<VideoSample>, DataError> {
        let e = &self.manifest.entries[index];
        let tracks = read_tracks(self.resolve(&e.track_path))?;
        let frames = read_frames(self.resolve(&e.video_path), tracks.num_frames())?;
        let sample = VideoSample::new(e.id.clone(), frames, tracks, e.label, self.manifest.class_names.len())?;
        Ok(Arc::new(sample))
    }

    fn label(&self, index: usize) -> usize {
        self.manifest.entries[index].label
    }

    fn id(&self, index: usize) -> &str {
        &self.manifest.entries[index].id
    }

    fn class_names(&self) -> &[String] {
        &self.manifest.class_names
    }
}
