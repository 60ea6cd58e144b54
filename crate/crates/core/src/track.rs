//! Trajectory types and the operations that turn raw tracks into model input.
//!
//! Coordinates are pixel positions with pixel centers at integer values, so a
//! valid raw coordinate lies in `[0, W-1] x [0, H-1]`. Normalized coordinates
//! use the per-axis affine map `x' = 2x/(W-1) - 1`, placing both image borders
//! at -1 and 1.

use image::RgbImage;
use rand::Rng;
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("expected raw pixel coordinates but the track set is normalized")]
    ExpectedRaw,
    #[error("expected normalized coordinates but the track set holds raw pixels")]
    ExpectedNormalized,
    #[error("invalid image dimensions {width}x{height} (both sides must be at least 2 px)")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("requested {requested} points but only {available} are available")]
    InsufficientPoints { requested: usize, available: usize },
    #[error("invalid point-count range [{min}, {max}]")]
    InvalidRange { min: usize, max: usize },
    #[error("a track needs at least one frame")]
    EmptyTrack,
    #[error("track has {coords} coordinates but {visible} visibility flags")]
    VisibilityLength { coords: usize, visible: usize },
    #[error("point {point} has {found} frames, expected {expected}")]
    FrameCount { point: usize, found: usize, expected: usize },
    #[error("point {point} frame {frame}: coordinate ({x}, {y}) outside the {width}x{height} image")]
    OutOfBounds { point: usize, frame: usize, x: f64, y: f64, width: u32, height: u32 },
    #[error("point {point} frame {frame}: non-finite coordinate")]
    NonFinite { point: usize, frame: usize },
    #[error("frame index {index} out of range for {frames} frames")]
    FrameIndex { index: usize, frames: usize },
    #[error("motion matrix width {width} is not 2 x frame count")]
    MotionWidth { width: usize },
    #[error("sample has {frames} frames but its tracks span {track_frames}")]
    SampleFrames { frames: usize, track_frames: usize },
    #[error("frame size {frame_w}x{frame_h} differs from track image size {width}x{height}")]
    SampleSize { frame_w: u32, frame_h: u32, width: u32, height: u32 },
    #[error("label {label} outside [0, {num_classes})")]
    Label { label: usize, num_classes: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// One point followed through `T` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct PointTrack {
    coords: Vec<Point>,
    visible: Vec<bool>,
}

impl PointTrack {
    pub fn new(coords: Vec<Point>, visible: Vec<bool>) -> Result<Self, TrackError> {
        if coords.is_empty() {
            return Err(TrackError::EmptyTrack);
        }
        if coords.len() != visible.len() {
            return Err(TrackError::VisibilityLength { coords: coords.len(), visible: visible.len() });
        }
        Ok(Self { coords, visible })
    }

    /// A track that is visible in every frame.
    pub fn fully_visible(coords: Vec<Point>) -> Result<Self, TrackError> {
        let visible = vec![true; coords.len()];
        Self::new(coords, visible)
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn visible(&self) -> &[bool] {
        &self.visible
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub(crate) fn from_parts(coords: Vec<Point>, visible: Vec<bool>) -> Self {
        debug_assert_eq!(coords.len(), visible.len());
        Self { coords, visible }
    }

    fn map_coords(&self, f: impl Fn(Point) -> Point) -> Self {
        Self { coords: self.coords.iter().copied().map(f).collect(), visible: self.visible.clone() }
    }
}

/// All tracked points of one clip.
///
/// Every track spans the same `num_frames`; the frame count is stored
/// separately so an empty set still knows its temporal extent.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackSet {
    pub(crate) tracks: Vec<PointTrack>,
    pub(crate) num_frames: usize,
    pub(crate) width: u32,
    pub(crate) height: u32,
    pub(crate) fps: f32,
    pub(crate) normalized: bool,
}

impl TrackSet {
    /// Builds a raw (pixel-space) track set.
    ///
    /// Coordinates must be finite and inside `[0, W) x [0, H)`; values past the
    /// last pixel center are clamped onto it.
    pub fn new(
        tracks: Vec<PointTrack>,
        num_frames: usize,
        width: u32,
        height: u32,
        fps: f32,
    ) -> Result<Self, TrackError> {
        if width < 2 || height < 2 {
            return Err(TrackError::InvalidDimensions { width, height });
        }
        if num_frames == 0 {
            return Err(TrackError::EmptyTrack);
        }
        let (max_x, max_y) = (f64::from(width - 1), f64::from(height - 1));
        let mut tracks = tracks;
        for (p, track) in tracks.iter_mut().enumerate() {
            if track.len() != num_frames {
                return Err(TrackError::FrameCount { point: p, found: track.len(), expected: num_frames });
            }
            for (t, c) in track.coords.iter_mut().enumerate() {
                if !c.x.is_finite() || !c.y.is_finite() {
                    return Err(TrackError::NonFinite { point: p, frame: t });
                }
                if c.x < 0.0 || c.y < 0.0 || c.x >= f64::from(width) || c.y >= f64::from(height) {
                    return Err(TrackError::OutOfBounds { point: p, frame: t, x: c.x, y: c.y, width, height });
                }
                c.x = c.x.min(max_x);
                c.y = c.y.min(max_y);
            }
        }
        Ok(Self { tracks, num_frames, width, height, fps, normalized: false })
    }

    /// An empty set that keeps the temporal and spatial metadata.
    pub fn empty(num_frames: usize, width: u32, height: u32, fps: f32) -> Result<Self, TrackError> {
        Self::new(Vec::new(), num_frames, width, height, fps)
    }

    pub fn tracks(&self) -> &[PointTrack] {
        &self.tracks
    }

    pub fn track(&self, index: usize) -> &PointTrack {
        &self.tracks[index]
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Tracks at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> TrackSet {
        TrackSet {
            tracks: indices.iter().map(|&i| self.tracks[i].clone()).collect(),
            ..self.with_tracks(Vec::new())
        }
    }

    /// Keeps only the listed frames (in order, repeats allowed) of every track.
    pub fn select_frames(&self, frames: &[usize]) -> Result<TrackSet, TrackError> {
        if frames.is_empty() {
            return Err(TrackError::EmptyTrack);
        }
        if let Some(&bad) = frames.iter().find(|&&f| f >= self.num_frames) {
            return Err(TrackError::FrameIndex { index: bad, frames: self.num_frames });
        }
        let tracks = self
            .tracks
            .iter()
            .map(|t| {
                PointTrack::from_parts(
                    frames.iter().map(|&f| t.coords[f]).collect(),
                    frames.iter().map(|&f| t.visible[f]).collect(),
                )
            })
            .collect();
        Ok(TrackSet { tracks, num_frames: frames.len(), ..self.with_tracks(Vec::new()) })
    }

    pub(crate) fn with_tracks(&self, tracks: Vec<PointTrack>) -> TrackSet {
        TrackSet {
            tracks,
            num_frames: self.num_frames,
            width: self.width,
            height: self.height,
            fps: self.fps,
            normalized: self.normalized,
        }
    }

    pub(crate) fn from_parts(
        tracks: Vec<PointTrack>,
        num_frames: usize,
        width: u32,
        height: u32,
        fps: f32,
        normalized: bool,
    ) -> TrackSet {
        TrackSet { tracks, num_frames, width, height, fps, normalized }
    }
}

/// Maps raw pixel coordinates onto `[-1, 1]` per axis.
pub fn normalize_tracks(ts: &TrackSet) -> Result<TrackSet, TrackError> {
    if ts.normalized {
        return Err(TrackError::ExpectedRaw);
    }
    let (sx, sy) = axis_scales(ts.width, ts.height)?;
    let tracks = ts
        .tracks
        .iter()
        .map(|t| t.map_coords(|c| Point::new(2.0 * c.x / sx - 1.0, 2.0 * c.y / sy - 1.0)))
        .collect();
    Ok(TrackSet { tracks, normalized: true, ..ts.with_tracks(Vec::new()) })
}

/// Inverse of [`normalize_tracks`].
pub fn denormalize_tracks(ts: &TrackSet) -> Result<TrackSet, TrackError> {
    if !ts.normalized {
        return Err(TrackError::ExpectedNormalized);
    }
    let (sx, sy) = axis_scales(ts.width, ts.height)?;
    let tracks = ts
        .tracks
        .iter()
        .map(|t| t.map_coords(|c| Point::new((c.x + 1.0) * sx / 2.0, (c.y + 1.0) * sy / 2.0)))
        .collect();
    Ok(TrackSet { tracks, normalized: false, ..ts.with_tracks(Vec::new()) })
}

fn axis_scales(width: u32, height: u32) -> Result<(f64, f64), TrackError> {
    if width < 2 || height < 2 {
        return Err(TrackError::InvalidDimensions { width, height });
    }
    Ok((f64::from(width - 1), f64::from(height - 1)))
}

/// Indices of `k` points drawn uniformly without replacement from `p`.
pub fn sample_point_indices(p: usize, k: usize, seed: u64) -> Result<Vec<usize>, TrackError> {
    if k > p {
        return Err(TrackError::InsufficientPoints { requested: k, available: p });
    }
    let mut rng = seed::rng(seed, &[]);
    Ok(rand::seq::index::sample(&mut rng, p, k).into_vec())
}

/// Random subset of `k` tracks; the same `(ts, k, seed)` always yields the
/// same selection.
pub fn sample_points(ts: &TrackSet, k: usize, seed: u64) -> Result<TrackSet, TrackError> {
    let indices = sample_point_indices(ts.len(), k, seed)?;
    Ok(ts.select(&indices))
}

/// Number of points to feed for mini-batch `batch_index`, uniform in
/// `[min_pts, max_pts]`.
pub fn randomized_point_count(
    min_pts: usize,
    max_pts: usize,
    seed: u64,
    batch_index: u64,
) -> Result<usize, TrackError> {
    if min_pts == 0 || min_pts > max_pts {
        return Err(TrackError::InvalidRange { min: min_pts, max: max_pts });
    }
    let mut rng = seed::rng(seed, &[batch_index]);
    Ok(rng.random_range(min_pts..=max_pts))
}

/// Row-major `(P, 2T)` matrix; row `i` is point `i`'s trajectory laid out as
/// `x_0, y_0, x_1, y_1, ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionMatrix {
    points: usize,
    frames: usize,
    data: Vec<f64>,
}

impl MotionMatrix {
    pub fn from_rows(frames: usize, data: Vec<f64>) -> Result<Self, TrackError> {
        if frames == 0 {
            return Err(TrackError::EmptyTrack);
        }
        if data.len() % (2 * frames) != 0 {
            return Err(TrackError::MotionWidth { width: data.len() });
        }
        Ok(Self { points: data.len() / (2 * frames), frames, data })
    }

    /// `(rows, cols)` = `(P, 2T)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.points, 2 * self.frames)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = 2 * self.frames;
        &self.data[i * w..(i + 1) * w]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Flattens a normalized track set into one row per point.
pub fn reshape_for_model(ts: &TrackSet) -> Result<MotionMatrix, TrackError> {
    if !ts.normalized {
        return Err(TrackError::ExpectedNormalized);
    }
    let data = ts
        .tracks
        .iter()
        .flat_map(|t| t.coords.iter().flat_map(|c| [c.x, c.y]))
        .collect();
    Ok(MotionMatrix { points: ts.len(), frames: ts.num_frames, data })
}

/// Inverse of [`reshape_for_model`]; visibility is not carried by the matrix,
/// so every point comes back visible.
pub fn tracks_from_motion(
    m: &MotionMatrix,
    width: u32,
    height: u32,
    fps: f32,
) -> Result<TrackSet, TrackError> {
    axis_scales(width, height)?;
    let tracks = (0..m.points)
        .map(|i| {
            let coords = m.row(i).chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
            PointTrack::from_parts(coords, vec![true; m.frames])
        })
        .collect();
    Ok(TrackSet::from_parts(tracks, m.frames, width, height, fps, true))
}

/// One clip: `T` RGB frames, its tracks and an action label.
#[derive(Clone, Debug)]
pub struct VideoSample {
    pub id: String,
    pub frames: Vec<RgbImage>,
    pub tracks: TrackSet,
    pub label: usize,
}

impl VideoSample {
    pub fn new(
        id: impl Into<String>,
        frames: Vec<RgbImage>,
        tracks: TrackSet,
        label: usize,
        num_classes: usize,
    ) -> Result<Self, TrackError> {
        if frames.len() != tracks.num_frames() {
            return Err(TrackError::SampleFrames { frames: frames.len(), track_frames: tracks.num_frames() });
        }
        if let Some(f) = frames.iter().find(|f| f.dimensions() != (tracks.width(), tracks.height())) {
            return Err(TrackError::SampleSize {
                frame_w: f.width(),
                frame_h: f.height(),
                width: tracks.width(),
                height: tracks.height(),
            });
        }
        if label >= num_classes {
            return Err(TrackError::Label { label, num_classes });
        }
        Ok(Self { id: id.into(), frames, tracks, label })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}
