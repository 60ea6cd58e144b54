//! Line-delimited dataset manifests.
//!
//! ```text
//! #split	train
//! #class	0	push something
//! #class	1	pretend to push something
//! clip-0001	frames/clip-0001.png	tracks/clip-0001.trks	0
//! ```
//!
//! Header lines start with `#`; every other non-empty line is
//! `id<TAB>video_path<TAB>track_path<TAB>label`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub video_path: PathBuf,
    pub track_path: PathBuf,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    pub split: Split,
}

impl DatasetManifest {
    /// Checks label range and id uniqueness.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.label >= self.class_names.len() {
                return Err(DataError::Manifest {
                    line: i + 1,
                    message: format!("label {} but only {} classes", e.label, self.class_names.len()),
                });
            }
            if !seen.insert(e.id.as_str()) {
                return Err(DataError::Manifest { line: i + 1, message: format!("duplicate id {:?}", e.id) });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut split = None;
        let mut classes: Vec<(usize, String)> = Vec::new();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let err = |message: String| DataError::Manifest { line: line_no, message };
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields[0] {
                "#split" if fields.len() == 2 => split = Some(fields[1].parse::<Split>().map_err(err)?),
                "#class" if fields.len() == 3 => {
                    let idx = fields[1].parse().map_err(|_| err(format!("bad class index {:?}", fields[1])))?;
                    classes.push((idx, fields[2].to_string()));
                }
                h if h.starts_with('#') => return Err(err(format!("unknown header {line:?}"))),
                _ if fields.len() == 4 => entries.push(ManifestEntry {
                    id: fields[0].to_string(),
                    video_path: PathBuf::from(fields[1]),
                    track_path: PathBuf::from(fields[2]),
                    label: fields[3].parse().map_err(|_| err(format!("bad label {:?}", fields[3])))?,
                }),
                _ => return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len()))),
            }
        }
        classes.sort_by_key(|(i, _)| *i);
        if classes.iter().enumerate().any(|(k, (i, _))| k != *i) {
            return Err(DataError::Manifest { line: 0, message: "class indices must be 0..C without gaps".into() });
        }
        let manifest = DatasetManifest {
            entries,
            class_names: classes.into_iter().map(|(_, n)| n).collect(),
            split: split.ok_or(DataError::Manifest { line: 0, message: "missing #split header".into() })?,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        fs::write(path, self.to_string()).map_err(|e| DataError::io(path, e))
    }
}

impl fmt::Display for DatasetManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "#split\t{}", self.split)?;
        for (i, name) in self.class_names.iter().enumerate() {
            writeln!(f, "#class\t{i}\t{name}")?;
        }
        for e in &self.entries {
            writeln!(f, "{}\t{}\t{}\t{}", e.id, e.video_path.display(), e.track_path.display(), e.label)?;
        }
        Ok(())
    }
}

/// Old-to-new class index table produced by [`filter_ambiguous_classes`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassRemap {
    pub old_to_new: Vec<Option<usize>>,
}

/// Drops every class whose name contains one of `forbidden` (case-insensitive)
/// together with its samples, then renumbers the remaining classes densely.
pub fn filter_ambiguous_classes(
    manifest: &DatasetManifest,
    forbidden: &[&str],
) -> Result<(DatasetManifest, ClassRemap), DataError> {
    if forbidden.is_empty() || forbidden.iter().any(|s| s.is_empty()) {
        return Err(DataError::Argument("forbidden substrings must be non-empty".into()));
    }
    let needles: Vec<String> = forbidden.iter().map(|s| s.to_lowercase()).collect();
    let mut old_to_new = Vec::with_capacity(manifest.class_names.len());
    let mut class_names = Vec::new();
    for name in &manifest.class_names {
        let lower = name.to_lowercase();
        if needles.iter().any(|n| lower.contains(n.as_str())) {
            old_to_new.push(None);
        } else {
            old_to_new.push(Some(class_names.len()));
            class_names.push(name.clone());
        }
    }
    let entries: Vec<ManifestEntry> = manifest
        .entries
        .iter()
        .filter_map(|e| old_to_new[e.label].map(|label| ManifestEntry { label, ..e.clone() }))
        .collect();
    if class_names.is_empty() || (entries.is_empty() && !manifest.entries.is_empty()) {
        return Err(DataError::EmptyDataset);
    }
    Ok((DatasetManifest { entries, class_names, split: manifest.split }, ClassRemap { old_to_new }))
}
