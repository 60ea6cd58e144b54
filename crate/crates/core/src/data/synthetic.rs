//! Synthetic moving-shape clips with analytic point tracks.
//!
//! Each clip shows one textured shape over a textured background. Both
//! textures come from the same value-noise generator, so a single frame
//! carries no information about the object, let alone its motion: the first
//! frame of every clip is drawn from a class-independent distribution. Only
//! the temporal behaviour of the points separates the classes.
//!
//! Tracks are not estimated. Points are placed uniformly at frame 0 and moved
//! with the closed-form motion of whatever they lie on: object points follow
//! the object's translation, rotation about its center and scaling; background
//! points follow the camera pan.

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::data::Split;
use crate::seed;
use crate::track::{Point, PointTrack, TrackSet, VideoSample};

/// Minimum distance in pixels between the object's bounding circle and the
/// image border, for every frame.
pub const BORDER_MARGIN: f64 = 4.0;

const TEXTURE_CELL: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionClass {
    TranslateLeft,
    TranslateRight,
    TranslateUp,
    TranslateDown,
    /// Clockwise as seen on screen (image y axis points down).
    RotateCw,
    RotateCcw,
    ScaleUp,
    ScaleDown,
    /// Context pack: the object moves right, the camera is static.
    ObjectRight,
    /// Context pack: the object is static in the world, the camera pans left,
    /// so the whole image content moves right.
    CameraPanLeft,
}

impl MotionClass {
    pub fn name(self) -> &'static str {
        match self {
            MotionClass::TranslateLeft => "translate-left",
            MotionClass::TranslateRight => "translate-right",
            MotionClass::TranslateUp => "translate-up",
            MotionClass::TranslateDown => "translate-down",
            MotionClass::RotateCw => "rotate-cw",
            MotionClass::RotateCcw => "rotate-ccw",
            MotionClass::ScaleUp => "scale-up",
            MotionClass::ScaleDown => "scale-down",
            MotionClass::ObjectRight => "object-right-camera-static",
            MotionClass::CameraPanLeft => "object-static-camera-pan-left",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClassSet {
    /// Eight object-motion classes under a static camera.
    #[default]
    Motion8,
    /// Two classes with the same image-space object motion, told apart only by
    /// what the background does.
    ContextPack,
}

impl ClassSet {
    pub fn classes(self) -> &'static [MotionClass] {
        use MotionClass::*;
        match self {
            ClassSet::Motion8 => {
                &[TranslateLeft, TranslateRight, TranslateUp, TranslateDown, RotateCw, RotateCcw, ScaleUp, ScaleDown]
            }
            ClassSet::ContextPack => &[ObjectRight, CameraPanLeft],
        }
    }

    pub fn class_names(self) -> Vec<String> {
        self.classes().iter().map(|c| c.name().to_string()).collect()
    }

    pub fn len(self) -> usize {
        self.classes().len()
    }

    pub fn is_empty(self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Disc,
    Square,
}

/// Object motion in image pixels per frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct ObjectMotion {
    pub velocity: [f64; 2],
    /// Radians per frame; positive turns clockwise on screen.
    pub angular_velocity: f64,
    /// Log-scale change per frame, `s(t) = exp(rate * t)`.
    pub scale_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct CameraMotion {
    /// Camera translation per frame; image content moves the opposite way.
    pub pan_velocity: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub class_id: usize,
    pub class: MotionClass,
    pub object: ObjectMotion,
    pub camera: CameraMotion,
    pub shape: Shape,
    /// Radius of the object's bounding circle at scale 1.
    pub radius: f64,
    /// Object center in frame 0.
    pub start: [f64; 2],
    pub start_angle: f64,
    pub object_seed: u64,
    pub background_seed: u64,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub fps: f32,
    pub points: usize,
}

/// Class-independent parameter ranges, in pixels for a 64-pixel frame; they
/// scale with `min(W, H) / 64`.
#[derive(Clone, Copy, Debug)]
struct Ranges {
    radius: (f64, f64),
    speed: (f64, f64),
    angular: (f64, f64),
    scale_rate: (f64, f64),
}

const RANGES_64: Ranges =
    Ranges { radius: (12.0, 15.0), speed: (0.5, 1.0), angular: (0.08, 0.14), scale_rate: (0.03, 0.05) };

impl SyntheticSceneSpec {
    /// Draws a scene for class `label` of `set`.
    ///
    /// Everything visible in frame 0 (shape, size, position, orientation,
    /// textures) and the motion magnitudes are drawn before the class is
    /// consulted, from the same stream for every class.
    #[allow(clippy::too_many_arguments)]
    pub fn sample(
        set: ClassSet,
        label: usize,
        seed: u64,
        frames: usize,
        width: u32,
        height: u32,
        points: usize,
    ) -> Result<Self, DataError> {
        let class = *set
            .classes()
            .get(label)
            .ok_or_else(|| DataError::Scene(format!("label {label} outside {} classes", set.len())))?;
        if frames == 0 || width < 16 || height < 16 {
            return Err(DataError::Scene(format!("unsupported clip geometry {frames}x{width}x{height}")));
        }
        let unit = f64::from(width.min(height)) / 64.0;
        let r = RANGES_64;
        let mut rng = seed::rng(seed, &[0x5ce7e]);
        let radius = unit * rng.random_range(r.radius.0..=r.radius.1);
        let shape = if rng.random_bool(0.5) { Shape::Disc } else { Shape::Square };
        let speed = unit * rng.random_range(r.speed.0..=r.speed.1);
        let angular = rng.random_range(r.angular.0..=r.angular.1);
        let scale_rate = rng.random_range(r.scale_rate.0..=r.scale_rate.1);
        let start_angle = rng.random_range(0.0..std::f64::consts::TAU);
        let object_seed = rng.random();
        let background_seed = rng.random();

        // Worst case over every class so the start distribution is shared.
        let span = (frames - 1) as f64;
        let reach = (unit * r.radius.1 + unit * r.speed.1 * span).max(unit * r.radius.1 * (r.scale_rate.1 * span).exp());
        let margin = BORDER_MARGIN + reach;
        let (hi_x, hi_y) = (f64::from(width - 1) - margin, f64::from(height - 1) - margin);
        if hi_x < margin || hi_y < margin {
            return Err(DataError::Scene(format!("{width}x{height} is too small for {frames}-frame motion")));
        }
        let start = [rng.random_range(margin..=hi_x), rng.random_range(margin..=hi_y)];

        let mut object = ObjectMotion::default();
        let mut camera = CameraMotion::default();
        match class {
            MotionClass::TranslateLeft => object.velocity = [-speed, 0.0],
            MotionClass::TranslateRight | MotionClass::ObjectRight => object.velocity = [speed, 0.0],
            MotionClass::TranslateUp => object.velocity = [0.0, -speed],
            MotionClass::TranslateDown => object.velocity = [0.0, speed],
            MotionClass::RotateCw => object.angular_velocity = angular,
            MotionClass::RotateCcw => object.angular_velocity = -angular,
            MotionClass::ScaleUp => object.scale_rate = scale_rate,
            MotionClass::ScaleDown => object.scale_rate = -scale_rate,
            MotionClass::CameraPanLeft => camera.pan_velocity = [-speed, 0.0],
        }
        let spec = SyntheticSceneSpec {
            class_id: label,
            class,
            object,
            camera,
            shape,
            radius,
            start,
            start_angle,
            object_seed,
            background_seed,
            frames,
            width,
            height,
            fps: 30.0,
            points,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Object center in image coordinates at frame `t`.
    pub fn object_center(&self, t: f64) -> Point {
        let v = self.object.velocity;
        let pan = self.camera.pan_velocity;
        Point::new(self.start[0] + (v[0] - pan[0]) * t, self.start[1] + (v[1] - pan[1]) * t)
    }

    pub fn object_angle(&self, t: f64) -> f64 {
        self.start_angle + self.object.angular_velocity * t
    }

    pub fn object_scale(&self, t: f64) -> f64 {
        (self.object.scale_rate * t).exp()
    }

    /// Image position at frame `t` of the object point with local coordinates `u`.
    pub fn object_point(&self, u: Point, t: f64) -> Point {
        let c = self.object_center(t);
        let (s, (sin, cos)) = (self.object_scale(t), self.object_angle(t).sin_cos());
        Point::new(c.x + s * (cos * u.x - sin * u.y), c.y + s * (sin * u.x + cos * u.y))
    }

    /// Local object coordinates of image position `p` at frame `t`.
    pub fn object_local(&self, p: Point, t: f64) -> Point {
        let c = self.object_center(t);
        let (s, (sin, cos)) = (self.object_scale(t), self.object_angle(t).sin_cos());
        let (dx, dy) = ((p.x - c.x) / s, (p.y - c.y) / s);
        Point::new(cos * dx + sin * dy, -sin * dx + cos * dy)
    }

    /// Image position at frame `t` of the background point that sat at `w` in frame 0.
    pub fn background_point(&self, w: Point, t: f64) -> Point {
        let pan = self.camera.pan_velocity;
        Point::new(w.x - pan[0] * t, w.y - pan[1] * t)
    }

    pub fn inside_object(&self, u: Point) -> bool {
        match self.shape {
            Shape::Disc => u.x * u.x + u.y * u.y <= self.radius * self.radius,
            Shape::Square => {
                let half = self.radius / std::f64::consts::SQRT_2;
                u.x.abs() <= half && u.y.abs() <= half
            }
        }
    }

    /// Checks that the object's bounding circle keeps [`BORDER_MARGIN`] pixels
    /// from every border in every frame.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.frames == 0 || self.width < 2 || self.height < 2 || self.radius <= 0.0 {
            return Err(DataError::Scene("degenerate scene geometry".into()));
        }
        let (max_x, max_y) = (f64::from(self.width - 1), f64::from(self.height - 1));
        for t in 0..self.frames {
            let c = self.object_center(t as f64);
            let r = self.radius * self.object_scale(t as f64);
            if c.x - r < BORDER_MARGIN
                || c.y - r < BORDER_MARGIN
                || c.x + r > max_x - BORDER_MARGIN
                || c.y + r > max_y - BORDER_MARGIN
            {
                return Err(DataError::Scene(format!(
                    "object (center {:.2},{:.2}, radius {r:.2}) leaves the frame at t={t}",
                    c.x, c.y
                )));
            }
        }
        Ok(())
    }

    pub fn render_frame(&self, t: usize) -> RgbImage {
        let tf = t as f64;
        let pan = self.camera.pan_velocity;
        RgbImage::from_fn(self.width, self.height, |x, y| {
            let p = Point::new(f64::from(x), f64::from(y));
            let u = self.object_local(p, tf);
            if self.inside_object(u) {
                texture(self.object_seed, u.x, u.y)
            } else {
                texture(self.background_seed, p.x + pan[0] * tf, p.y + pan[1] * tf)
            }
        })
    }
}

/// Value noise: random RGB values on a lattice of [`TEXTURE_CELL`] pixels,
/// bilinearly interpolated.
fn texture(seed: u64, x: f64, y: f64) -> Rgb<u8> {
    let (gx, gy) = (x / TEXTURE_CELL, y / TEXTURE_CELL);
    let (ix, iy) = (gx.floor(), gy.floor());
    let (fx, fy) = (gx - ix, gy - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let lattice = |cx: i64, cy: i64| {
        let h = seed::derive_seed(seed, &[cx as u64, cy as u64]);
        [(h & 0xff) as f64, ((h >> 8) & 0xff) as f64, ((h >> 16) & 0xff) as f64]
    };
    let (a, b, c, d) = (lattice(ix, iy), lattice(ix + 1, iy), lattice(ix, iy + 1), lattice(ix + 1, iy + 1));
    let mut out = [0u8; 3];
    for k in 0..3 {
        let top = a[k] + (b[k] - a[k]) * fx;
        let bottom = c[k] + (d[k] - c[k]) * fx;
        out[k] = (top + (bottom - top) * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// A generated clip plus its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub sample: VideoSample,
    /// Whether each track starts on the object.
    pub on_object: Vec<bool>,
    /// Closed-form positions before clamping, `[point][frame]`.
    pub analytic: Vec<Vec<Point>>,
}

pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec, seed: u64) -> Result<SyntheticScene, DataError> {
    spec.validate()?;
    let frames: Vec<RgbImage> = (0..spec.frames).map(|t| spec.render_frame(t)).collect();
    let (max_x, max_y) = (f64::from(spec.width - 1), f64::from(spec.height - 1));
    let mut rng = seed::rng(seed, &[0x9014]);
    let mut tracks = Vec::with_capacity(spec.points);
    let mut on_object = Vec::with_capacity(spec.points);
    let mut analytic = Vec::with_capacity(spec.points);
    for _ in 0..spec.points {
        let p0 = Point::new(rng.random_range(0.0..=max_x), rng.random_range(0.0..=max_y));
        let local = spec.object_local(p0, 0.0);
        let is_object = spec.inside_object(local);
        let mut coords = Vec::with_capacity(spec.frames);
        let mut visible = Vec::with_capacity(spec.frames);
        let mut exact = Vec::with_capacity(spec.frames);
        for t in 0..spec.frames {
            let tf = t as f64;
            let p = if is_object { spec.object_point(local, tf) } else { spec.background_point(p0, tf) };
            let inside = (0.0..=max_x).contains(&p.x) && (0.0..=max_y).contains(&p.y);
            let occluded = !is_object && spec.inside_object(spec.object_local(p, tf));
            exact.push(p);
            coords.push(Point::new(p.x.clamp(0.0, max_x), p.y.clamp(0.0, max_y)));
            visible.push(inside && !occluded);
        }
        tracks.push(PointTrack::new(coords, visible)?);
        on_object.push(is_object);
        analytic.push(exact);
    }
    let ts = TrackSet::new(tracks, spec.frames, spec.width, spec.height, spec.fps)?;
    let id = format!("synthetic-{seed:016x}");
    let num_classes = spec.class_id + 1;
    let sample = VideoSample::new(id, frames, ts, spec.class_id, num_classes)?;
    Ok(SyntheticScene { sample, on_object, analytic })
}

/// Renders the clip and computes its tracks; `seed` places the points.
pub fn generate_synthetic_sample(spec: &SyntheticSceneSpec, seed: u64) -> Result<VideoSample, DataError> {
    Ok(generate_synthetic_scene(spec, seed)?.sample)
}

/// A balanced synthetic split: `samples_per_class` clips per class, labels
/// interleaved (`label = index mod C`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDataset {
    pub class_set: ClassSet,
    pub samples_per_class: usize,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub points: usize,
    pub seed: u64,
}

impl Default for SyntheticDataset {
    fn default() -> Self {
        Self { class_set: ClassSet::Motion8, samples_per_class: 50, frames: 8, width: 64, height: 64, points: 400, seed: 0 }
    }
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.samples_per_class * self.class_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_names(&self) -> Vec<String> {
        self.class_set.class_names()
    }

    pub fn sample_id(&self, split: Split, index: usize) -> String {
        format!("syn-{}-{index:05}", split.as_str())
    }

    /// Scene spec and point seed of clip `index` in `split`.
    pub fn scene(&self, split: Split, index: usize) -> Result<(SyntheticSceneSpec, u64), DataError> {
        let label = index % self.class_set.len();
        let scene_seed = seed::derive_seed(self.seed, &[split.index(), index as u64]);
        let spec =
            SyntheticSceneSpec::sample(self.class_set, label, scene_seed, self.frames, self.width, self.height, self.points)?;
        Ok((spec, seed::derive_seed(scene_seed, &[1])))
    }

    pub fn generate_one(&self, split: Split, index: usize) -> Result<SyntheticScene, DataError> {
        let (spec, point_seed) = self.scene(split, index)?;
        let mut scene = generate_synthetic_scene(&spec, point_seed)?;
        scene.sample.id = self.sample_id(split, index);
        Ok(scene)
    }

    pub fn generate(&self, split: Split) -> Result<Vec<VideoSample>, DataError> {
        if self.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        (0..self.len()).map(|i| Ok(self.generate_one(split, i)?.sample)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(class: usize, set: ClassSet, seed: u64) -> SyntheticSceneSpec {
        SyntheticSceneSpec::sample(set, class, seed, 8, 64, 64, 300).unwrap()
    }

    #[test]
    fn translate_right_moves_only_the_object() {
        let s = spec(1, ClassSet::Motion8, 3);
        assert_eq!(s.class, MotionClass::TranslateRight);
        let scene = generate_synthetic_scene(&s, 11).unwrap();
        let v = s.object.velocity[0];
        for (track, &obj) in scene.sample.tracks.tracks().iter().zip(&scene.on_object) {
            let c = track.coords();
            let d = Point::new(c[1].x - c[0].x, c[1].y - c[0].y);
            if obj {
                assert!((d.x - v).abs() < 1e-9 && d.y.abs() < 1e-9);
            } else {
                assert_eq!(d, Point::new(0.0, 0.0));
            }
        }
        assert!(scene.on_object.iter().any(|&o| o));
    }

    #[test]
    fn camera_pan_left_moves_everything_right() {
        let s = spec(1, ClassSet::ContextPack, 5);
        assert_eq!(s.class, MotionClass::CameraPanLeft);
        let pan = -s.camera.pan_velocity[0];
        assert!(pan > 0.0);
        let scene = generate_synthetic_scene(&s, 2).unwrap();
        for (i, exact) in scene.analytic.iter().enumerate() {
            let d = exact[1].x - exact[0].x;
            assert!((d - pan).abs() < 1e-9, "point {i} moved {d}");
            assert!((exact[1].y - exact[0].y).abs() < 1e-12);
        }
    }

    #[test]
    fn first_frame_is_class_independent() {
        for seed in 0..4 {
            let frames: Vec<RgbImage> =
                (0..8).map(|c| spec(c, ClassSet::Motion8, seed).render_frame(0)).collect();
            assert!(frames.windows(2).all(|w| w[0] == w[1]));
            let a = spec(0, ClassSet::ContextPack, seed).render_frame(0);
            assert_eq!(a, spec(1, ClassSet::ContextPack, seed).render_frame(0));
        }
    }

    #[test]
    fn later_frames_differ_between_classes() {
        let a = spec(0, ClassSet::Motion8, 1).render_frame(7);
        let b = spec(1, ClassSet::Motion8, 1).render_frame(7);
        assert_ne!(a, b);
    }

    #[test]
    fn leaving_the_frame_is_rejected() {
        let mut s = spec(1, ClassSet::Motion8, 0);
        s.object.velocity = [5.0, 0.0];
        assert!(matches!(s.validate(), Err(DataError::Scene(_))));
        assert!(generate_synthetic_sample(&s, 0).is_err());
    }

    #[test]
    fn local_coordinates_invert() {
        let s = spec(4, ClassSet::Motion8, 9);
        let u = Point::new(3.0, -2.0);
        for t in 0..8 {
            let back = s.object_local(s.object_point(u, t as f64), t as f64);
            assert!((back.x - u.x).abs() < 1e-9 && (back.y - u.y).abs() < 1e-9);
        }
    }

    #[test]
    fn dataset_is_balanced_and_deterministic() {
        let ds = SyntheticDataset { samples_per_class: 2, points: 20, ..Default::default() };
        let a = ds.generate(Split::Train).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a.iter().filter(|s| s.label == 3).count(), 2);
        let b = ds.generate(Split::Train).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.tracks, y.tracks);
            assert_eq!(x.frames, y.frames);
            assert_eq!(x.id, y.id);
        }
        let val = ds.generate(Split::Val).unwrap();
        assert_ne!(a[0].tracks, val[0].tracks);
        let empty = SyntheticDataset { samples_per_class: 0, ..ds };
        assert!(matches!(empty.generate(Split::Train), Err(DataError::EmptyDataset)));
    }
}
