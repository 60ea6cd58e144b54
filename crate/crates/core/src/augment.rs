//! Clip-level augmentation with track replay.
//!
//! One [`AugmentRecord`] is drawn per clip and applied to all of its frames,
//! then replayed on the track coordinates. Geometry uses a corner-aligned
//! convention: output pixel `x'` samples source position `x0 + x' * w / out_w`,
//! which is exactly the inverse of the track map `x' = (x - x0) * out_w / w`.

use image::{imageops, Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::track::{Point, PointTrack, TrackError, TrackSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("crop box {crop:?} does not fit a {width}x{height} image")]
    CropOutside { crop: CropBox, width: u32, height: u32 },
    #[error("no frames to augment")]
    NoFrames,
    #[error("frame {index} is {found:?}, expected {expected:?}")]
    FrameSize { index: usize, found: (u32, u32), expected: (u32, u32) },
    #[error("invalid augmentation policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Track(#[from] TrackError),
}

/// Ranges the per-clip transform is drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    /// Crop side length as a fraction of the source side, `[min, max]`.
    pub crop_scale: [f64; 2],
    pub flip_probability: f64,
    /// Gaussian blur sigma in output pixels, `[min, max]`; 0 disables.
    pub blur_sigma: [f64; 2],
    /// Brightness, contrast and saturation factors are drawn from `1 ± color_jitter`.
    pub color_jitter: f64,
    /// `[width, height]` of the augmented frames.
    pub output_size: [u32; 2],
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            crop_scale: [0.7, 1.0],
            flip_probability: 0.5,
            blur_sigma: [0.0, 1.5],
            color_jitter: 0.2,
            output_size: [256, 256],
        }
    }
}

impl AugmentPolicy {
    /// Geometry-free policy that only resizes to `output_size`.
    pub fn resize_only(width: u32, height: u32) -> Self {
        Self { crop_scale: [1.0, 1.0], flip_probability: 0.0, blur_sigma: [0.0, 0.0], color_jitter: 0.0, output_size: [width, height] }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::Policy(m.to_string()));
        let [lo, hi] = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("crop_scale must satisfy 0 < min <= max <= 1");
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad("flip_probability must lie in [0, 1]");
        }
        let [lo, hi] = self.blur_sigma;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad("blur_sigma must satisfy 0 <= min <= max");
        }
        if !(0.0..1.0).contains(&self.color_jitter) {
            return bad("color_jitter must lie in [0, 1)");
        }
        if self.output_size.iter().any(|&s| s < 2) {
            return bad("output_size sides must be at least 2");
        }
        Ok(())
    }
}

/// Crop rectangle in source pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

impl CropBox {
    pub fn full(width: u32, height: u32) -> Self {
        Self { x0: 0, y0: 0, width, height }
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.width > 0
            && self.height > 0
            && u64::from(self.x0) + u64::from(self.width) <= u64::from(width)
            && u64::from(self.y0) + u64::from(self.height) <= u64::from(height)
    }
}

/// Multiplicative color factors; 1.0 leaves the image unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl ColorJitter {
    pub const IDENTITY: ColorJitter = ColorJitter { brightness: 1.0, contrast: 1.0, saturation: 1.0 };

    fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// The exact transform applied to one clip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub crop: CropBox,
    pub flipped: bool,
    pub blur_sigma: f64,
    pub jitter: ColorJitter,
    pub output_size: (u32, u32),
}

impl AugmentRecord {
    pub fn identity(width: u32, height: u32) -> Self {
        Self {
            crop: CropBox::full(width, height),
            flipped: false,
            blur_sigma: 0.0,
            jitter: ColorJitter::IDENTITY,
            output_size: (width, height),
        }
    }

    pub fn flip_only(width: u32, height: u32) -> Self {
        Self { flipped: true, ..Self::identity(width, height) }
    }

    fn scale(&self) -> (f64, f64) {
        (
            f64::from(self.output_size.0) / f64::from(self.crop.width),
            f64::from(self.output_size.1) / f64::from(self.crop.height),
        )
    }
}

/// Draws the transform for one clip whose frames are `width x height`.
///
/// The policy is assumed valid (see [`AugmentPolicy::validate`]).
pub fn sample_augmentation(seed: u64, policy: &AugmentPolicy, width: u32, height: u32) -> AugmentRecord {
    let mut rng = seed::rng(seed, &[0xa06]);
    let [lo, hi] = policy.crop_scale;
    let s = if lo < hi { rng.random_range(lo..=hi) } else { lo };
    let cw = ((s * f64::from(width)).round() as u32).clamp(1, width);
    let ch = ((s * f64::from(height)).round() as u32).clamp(1, height);
    let x0 = rng.random_range(0..=width - cw);
    let y0 = rng.random_range(0..=height - ch);
    let flipped = rng.random_bool(policy.flip_probability);
    let [blo, bhi] = policy.blur_sigma;
    let blur_sigma = if blo < bhi { rng.random_range(blo..=bhi) } else { blo };
    let j = policy.color_jitter;
    let mut factor = || if j > 0.0 { rng.random_range(1.0 - j..=1.0 + j) } else { 1.0 };
    let jitter = ColorJitter { brightness: factor(), contrast: factor(), saturation: factor() };
    AugmentRecord {
        crop: CropBox { x0, y0, width: cw, height: ch },
        flipped,
        blur_sigma,
        jitter,
        output_size: (policy.output_size[0], policy.output_size[1]),
    }
}

/// Crop, resize, optional mirror, then blur and color jitter, identically on
/// every frame.
pub fn apply_to_frames(frames: &[RgbImage], rec: &AugmentRecord) -> Result<Vec<RgbImage>, AugmentError> {
    let first = frames.first().ok_or(AugmentError::NoFrames)?;
    let (w, h) = first.dimensions();
    if !rec.crop.fits(w, h) {
        return Err(AugmentError::CropOutside { crop: rec.crop, width: w, height: h });
    }
    frames
        .iter()
        .enumerate()
        .map(|(index, f)| {
            if f.dimensions() != (w, h) {
                return Err(AugmentError::FrameSize { index, found: f.dimensions(), expected: (w, h) });
            }
            let mut out = crop_resize(f, rec);
            if rec.flipped {
                imageops::flip_horizontal_in_place(&mut out);
            }
            if rec.blur_sigma > 0.0 {
                out = imageops::blur(&out, rec.blur_sigma as f32);
            }
            if !rec.jitter.is_identity() {
                jitter(&mut out, &rec.jitter);
            }
            Ok(out)
        })
        .collect()
}

fn crop_resize(src: &RgbImage, rec: &AugmentRecord) -> RgbImage {
    let c = rec.crop;
    let (ow, oh) = rec.output_size;
    if (c.width, c.height) == (ow, oh) {
        return imageops::crop_imm(src, c.x0, c.y0, c.width, c.height).to_image();
    }
    let (sx, sy) = rec.scale();
    let (max_x, max_y) = (f64::from(src.width() - 1), f64::from(src.height() - 1));
    RgbImage::from_fn(ow, oh, |x, y| {
        let fx = (f64::from(c.x0) + f64::from(x) / sx).min(max_x);
        let fy = (f64::from(c.y0) + f64::from(y) / sy).min(max_y);
        bilinear(src, fx, fy)
    })
}

fn bilinear(src: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(src.width() - 1), (y0 + 1).min(src.height() - 1));
    let (fx, fy) = (x - f64::from(x0), y - f64::from(y0));
    let (a, b, c, d) = (src.get_pixel(x0, y0), src.get_pixel(x1, y0), src.get_pixel(x0, y1), src.get_pixel(x1, y1));
    let mut out = [0u8; 3];
    for k in 0..3 {
        let top = f64::from(a[k]) * (1.0 - fx) + f64::from(b[k]) * fx;
        let bottom = f64::from(c[k]) * (1.0 - fx) + f64::from(d[k]) * fx;
        out[k] = (top * (1.0 - fy) + bottom * fy).round() as u8;
    }
    Rgb(out)
}

fn jitter(img: &mut RgbImage, j: &ColorJitter) {
    let luma = |p: &Rgb<u8>| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
    let n = f64::from(img.width() * img.height()).max(1.0);
    let mean = img.pixels().map(luma).sum::<f64>() / n * j.brightness;
    for p in img.pixels_mut() {
        let mut v = [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])].map(|c| c * j.brightness);
        v = v.map(|c| (c - mean) * j.contrast + mean);
        let gray = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
        v = v.map(|c| (c - gray) * j.saturation + gray);
        *p = Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8));
    }
}

/// Replays the geometric part of `rec` on raw source-pixel tracks.
///
/// Points that land outside the output image are clamped onto its border and
/// marked invisible, so the point count never changes.
pub fn apply_to_tracks(ts: &TrackSet, rec: &AugmentRecord) -> Result<TrackSet, AugmentError> {
    if ts.is_normalized() {
        return Err(TrackError::ExpectedRaw.into());
    }
    if !rec.crop.fits(ts.width(), ts.height()) {
        return Err(AugmentError::CropOutside { crop: rec.crop, width: ts.width(), height: ts.height() });
    }
    let (ow, oh) = rec.output_size;
    let (max_x, max_y) = (f64::from(ow - 1), f64::from(oh - 1));
    let (sx, sy) = rec.scale();
    let (x0, y0) = (f64::from(rec.crop.x0), f64::from(rec.crop.y0));
    let tracks = ts
        .tracks()
        .iter()
        .map(|t| {
            let mut coords = Vec::with_capacity(t.len());
            let mut visible = Vec::with_capacity(t.len());
            for (c, &v) in t.coords().iter().zip(t.visible()) {
                let (x, y) = ((c.x - x0) * sx, (c.y - y0) * sy);
                let inside = (0.0..=max_x).contains(&x) && (0.0..=max_y).contains(&y);
                let mut x = x.clamp(0.0, max_x);
                if rec.flipped {
                    x = max_x - x;
                }
                coords.push(Point::new(x, y.clamp(0.0, max_y)));
                visible.push(v && inside);
            }
            PointTrack::from_parts(coords, visible)
        })
        .collect();
    Ok(TrackSet::from_parts(tracks, ts.num_frames(), ow, oh, ts.fps(), false))
}
