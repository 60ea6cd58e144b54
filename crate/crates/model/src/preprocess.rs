use candle_core::{DType, Device, Tensor};
use image::RgbImage;
use trec_core::track::{normalize_tracks, reshape_for_model};
use trec_core::{MotionMatrix, VideoSample};

use crate::network::ModelInput;
use crate::{ModelError, TrecModel};

pub const PIXEL_MEAN: f32 = 0.45;
pub const PIXEL_STD: f32 = 0.25;

/// Stacks the first `frames` images of every clip into `(B, frames, H, W, 3)`
/// with per-channel normalization.
pub fn frames_tensor(clips: &[&[RgbImage]], frames: usize, dtype: DType) -> Result<Tensor, ModelError> {
    let first = clips.first().and_then(|c| c.first()).ok_or_else(|| ModelError::Shape("no frames".into()))?;
    let (w, h) = first.dimensions();
    let mut data = Vec::with_capacity(clips.len() * frames * (w * h * 3) as usize);
    for clip in clips {
        if clip.len() < frames {
            return Err(ModelError::Shape(format!("clip has {} frames, need {frames}", clip.len())));
        }
        for img in &clip[..frames] {
            if img.dimensions() != (w, h) {
                return Err(ModelError::Shape(format!("frame is {:?}, batch uses {w}x{h}", img.dimensions())));
            }
            data.extend(img.as_raw().iter().map(|&v| (f32::from(v) / 255.0 - PIXEL_MEAN) / PIXEL_STD));
        }
    }
    let t = Tensor::from_vec(data, (clips.len(), frames, h as usize, w as usize, 3), &Device::Cpu)?;
    Ok(t.to_dtype(dtype)?)
}

/// Stacks motion matrices into `(B, P, 2T)`, zero-padding shorter ones to the
/// longest. The keep mask is `None` when no row is padding.
pub fn tracks_tensor(rows: &[MotionMatrix], dtype: DType) -> Result<(Tensor, Option<Vec<bool>>), ModelError> {
    let width = rows.first().map(|m| m.shape().1).unwrap_or(0);
    if rows.iter().any(|m| m.shape().1 != width) {
        return Err(ModelError::Shape("motion matrices disagree on T".into()));
    }
    let p = rows.iter().map(|m| m.shape().0).max().unwrap_or(0);
    let mut data = Vec::with_capacity(rows.len() * p * width);
    let mut keep = Vec::with_capacity(rows.len() * p);
    for m in rows {
        data.extend(m.as_slice().iter().map(|&v| v as f32));
        data.resize(data.len() + (p - m.shape().0) * width, 0.0);
        keep.extend((0..p).map(|i| i < m.shape().0));
    }
    let t = Tensor::from_vec(data, (rows.len(), p, width), &Device::Cpu)?.to_dtype(dtype)?;
    let keep = if keep.iter().all(|&k| k) { None } else { Some(keep) };
    Ok((t, keep))
}

impl TrecModel {
    /// Logits for one raw sample, using every track it carries.
    pub fn forward_sample(&self, sample: &VideoSample) -> Result<Tensor, ModelError> {
        let motion = reshape_for_model(&normalize_tracks(&sample.tracks)?)?;
        let frames = if self.config().mode.single_image() { 1 } else { sample.num_frames() };
        let frames = frames_tensor(&[&sample.frames], frames, self.dtype())?;
        let (tracks, keep) = tracks_tensor(&[motion], self.dtype())?;
        let logits = self.forward(&ModelInput { frames, tracks: Some(tracks), keep }, None)?;
        Ok(logits.squeeze(0)?)
    }
}
