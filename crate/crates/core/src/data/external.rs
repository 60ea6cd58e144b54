//! Adapter for raw array dumps produced by an external point tracker.
//!
//! A dump is a flat little-endian array plus a JSON layout descriptor naming
//! its axis order, e.g. for a tracker that emits `(B=1, T, P, 2)`:
//!
//! ```json
//! {
//!   "axes": "batch-frame-point-coord",
//!   "dtype": "f32",
//!   "points": 900, "frames": 8, "width": 256, "height": 256, "fps": 30.0,
//!   "visibility_file": "visibility.u8",
//!   "visibility_dtype": "u8"
//! }
//! ```
//!
//! The visibility array, when present, uses the same axis order without the
//! coordinate axis. Relative paths resolve against the descriptor's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::track::{Point, PointTrack, TrackSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisOrder {
    PointFrameCoord,
    FramePointCoord,
    /// Leading batch axis of size 1, then frame, point, coordinate.
    BatchFramePointCoord,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ArrayDtype {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VisibilityDtype {
    /// One byte per entry, nonzero means visible.
    #[default]
    U8,
    /// `f32` visibility score, visible when above 0.5.
    F32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutDescriptor {
    pub axes: AxisOrder,
    #[serde(default)]
    pub dtype: ArrayDtype,
    pub points: usize,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_fps")]
    pub fps: f32,
    #[serde(default)]
    pub visibility_file: Option<PathBuf>,
    #[serde(default)]
    pub visibility_dtype: VisibilityDtype,
}

fn default_fps() -> f32 {
    30.0
}

impl LayoutDescriptor {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let mut desc: LayoutDescriptor =
            serde_json::from_str(&text).map_err(|e| DataError::Descriptor(e.to_string()))?;
        if let (Some(v), Some(dir)) = (&desc.visibility_file, path.parent()) {
            if v.is_relative() {
                desc.visibility_file = Some(dir.join(v));
            }
        }
        Ok(desc)
    }

    /// Flat offset of `(point, frame)` in an array with this axis order and
    /// `inner` trailing elements per entry.
    fn offset(&self, point: usize, frame: usize, inner: usize) -> usize {
        match self.axes {
            AxisOrder::PointFrameCoord => (point * self.frames + frame) * inner,
            AxisOrder::FramePointCoord | AxisOrder::BatchFramePointCoord => {
                (frame * self.points + point) * inner
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ImportReport {
    /// Coordinate components moved onto the image border.
    pub clamped: usize,
}

/// Canonicalizes a flat coordinate array (and optional visibility) into a
/// raw [`TrackSet`], clamping coordinates into the image.
pub fn tracks_from_array(
    values: &[f64],
    visibility: Option<&[bool]>,
    layout: &LayoutDescriptor,
) -> Result<(TrackSet, ImportReport), DataError> {
    let (p, t) = (layout.points, layout.frames);
    if t == 0 {
        return Err(DataError::Descriptor("frames must be at least 1".into()));
    }
    if values.len() != p * t * 2 {
        return Err(DataError::Descriptor(format!(
            "array holds {} values, layout implies {}",
            values.len(),
            p * t * 2
        )));
    }
    if let Some(v) = visibility {
        if v.len() != p * t {
            return Err(DataError::Descriptor(format!(
                "visibility holds {} entries, layout implies {}",
                v.len(),
                p * t
            )));
        }
    }
    let bad: Vec<usize> = (0..p)
        .filter(|&i| {
            (0..t).any(|f| {
                let o = layout.offset(i, f, 2);
                !values[o].is_finite() || !values[o + 1].is_finite()
            })
        })
        .collect();
    if !bad.is_empty() {
        return Err(DataError::NonFinite { points: bad });
    }
    if layout.width < 2 || layout.height < 2 {
        return Err(DataError::Descriptor(format!("invalid image size {}x{}", layout.width, layout.height)));
    }
    let (max_x, max_y) = (f64::from(layout.width - 1), f64::from(layout.height - 1));
    let mut report = ImportReport::default();
    let mut clamp = |v: f64, hi: f64| {
        let c = v.clamp(0.0, hi);
        if c != v {
            report.clamped += 1;
        }
        c
    };
    let mut tracks = Vec::with_capacity(p);
    for i in 0..p {
        let mut coords = Vec::with_capacity(t);
        let mut vis = Vec::with_capacity(t);
        for f in 0..t {
            let o = layout.offset(i, f, 2);
            coords.push(Point::new(clamp(values[o], max_x), clamp(values[o + 1], max_y)));
            vis.push(visibility.is_none_or(|v| v[layout.offset(i, f, 1)]));
        }
        tracks.push(PointTrack::new(coords, vis)?);
    }
    if report.clamped > 0 {
        log::warn!("clamped {} coordinate components into the {}x{} image", report.clamped, layout.width, layout.height);
    }
    let ts = TrackSet::new(tracks, t, layout.width, layout.height, layout.fps)?;
    Ok((ts, report))
}

/// Reads the coordinate dump at `source` (and the visibility dump named by
/// the descriptor) into canonical form.
pub fn import_external_tracks(
    source: impl AsRef<Path>,
    layout: &LayoutDescriptor,
) -> Result<(TrackSet, ImportReport), DataError> {
    let source = source.as_ref();
    let bytes = fs::read(source).map_err(|e| DataError::io(source, e))?;
    let values: Vec<f64> = match layout.dtype {
        ArrayDtype::F32 => {
            check_width(&bytes, 4, source)?;
            bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect()
        }
        ArrayDtype::F64 => {
            check_width(&bytes, 8, source)?;
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
        }
    };
    let visibility = match &layout.visibility_file {
        None => None,
        Some(path) => {
            let raw = fs::read(path).map_err(|e| DataError::io(path, e))?;
            Some(match layout.visibility_dtype {
                VisibilityDtype::U8 => raw.iter().map(|&b| b != 0).collect::<Vec<_>>(),
                VisibilityDtype::F32 => {
                    check_width(&raw, 4, path)?;
                    raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) > 0.5).collect()
                }
            })
        }
    };
    tracks_from_array(&values, visibility.as_deref(), layout)
}

fn check_width(bytes: &[u8], width: usize, path: &Path) -> Result<(), DataError> {
    if bytes.len() % width != 0 {
        return Err(DataError::Descriptor(format!(
            "{} is {} bytes, not a multiple of {width}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(())
}
