use candle_core::DType;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use trec_core::augment::{apply_to_frames, apply_to_tracks, sample_augmentation, AugmentRecord};
use trec_core::data::{sample_frames, FrameSampling, SampleSource};
use trec_core::kde::{filter_background, KdeConfig};
use trec_core::seed::{derive_seed, hash_str};
use trec_core::track::{normalize_tracks, reshape_for_model, sample_point_indices};
use trec_core::{MotionMatrix, TrackSet, VideoSample};
use trec_model::preprocess::{frames_tensor, tracks_tensor};
use trec_model::{ModelConfig, ModelInput, TrecModel};

use crate::fit::RngStreams;
use crate::{TrainConfig, TrainError};

// stream tags for derived seeds
pub(crate) const STREAM_ORDER: u64 = 0x0d;
pub(crate) const STREAM_AUGMENT: u64 = 0xa6;
pub(crate) const STREAM_POINTS: u64 = 0x91;
pub(crate) const STREAM_COUNT: u64 = 0xc0;
pub(crate) const STREAM_DROPOUT: u64 = 0xd5;
pub(crate) const STREAM_FRAMES: u64 = 0xf7;
pub(crate) const STREAM_INIT: u64 = 0x1e;
const STREAM_EVAL_POINTS: u64 = 0xe9;

/// Model-ready mini-batch.
pub struct Batch {
    pub input: ModelInput,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

struct Prepared {
    frames: Vec<RgbImage>,
    motion: Option<MotionMatrix>,
    label: usize,
    id: String,
}

fn frame_count(model: &ModelConfig) -> usize {
    model.frame_tokens()
}

/// Aligned frame and track subsets for the observation horizon.
fn observe(sample: &VideoSample, model: &ModelConfig, seed: u64, mode: FrameSampling) -> Result<(Vec<RgbImage>, Option<TrackSet>), TrainError> {
    let idx = sample_frames(sample.num_frames(), model.num_frames, seed, mode);
    let frames = idx.iter().take(frame_count(model)).map(|&i| sample.frames[i].clone()).collect();
    let tracks = if model.mode.uses_tracks() { Some(sample.tracks.select_frames(&idx)?) } else { None };
    Ok((frames, tracks))
}

fn collate(items: Vec<Prepared>, model: &ModelConfig, dtype: DType) -> Result<Batch, TrainError> {
    let clips: Vec<&[RgbImage]> = items.iter().map(|p| p.frames.as_slice()).collect();
    let frames = frames_tensor(&clips, frame_count(model), dtype)?;
    let (tracks, keep) = if model.mode.uses_tracks() {
        let rows: Vec<MotionMatrix> = items.iter().map(|p| p.motion.clone().expect("tracks prepared")).collect();
        let (t, keep) = tracks_tensor(&rows, dtype)?;
        (Some(t), keep)
    } else {
        (None, None)
    };
    Ok(Batch {
        input: ModelInput { frames, tracks, keep },
        labels: items.iter().map(|p| p.label).collect(),
        ids: items.into_iter().map(|p| p.id).collect(),
    })
}

/// Assembles a training batch: frame subsampling, one augmentation per clip
/// replayed on its tracks, normalization, optional KDE filtering, then `k`
/// points per clip (fewer when filtering left fewer).
pub(crate) fn training_batch(
    source: &dyn SampleSource,
    indices: &[usize],
    epoch: usize,
    k: usize,
    model: &ModelConfig,
    cfg: &TrainConfig,
    streams: &RngStreams,
) -> Result<Batch, TrainError> {
    let mut items = Vec::with_capacity(indices.len());
    for &index in indices {
        let sample = source.get(index)?;
        let key = [epoch as u64, index as u64];
        let (frames, tracks) = observe(&sample, model, derive_seed(streams.augmentation, &[STREAM_FRAMES, key[0], key[1]]), cfg.frame_sampling)?;
        let (w, h) = frames[0].dimensions();
        let rec = sample_augmentation(derive_seed(streams.augmentation, &key), &cfg.augment, w, h);
        let frames = apply_to_frames(&frames, &rec)?;
        let motion = match tracks {
            Some(ts) => {
                let mut ts = normalize_tracks(&apply_to_tracks(&ts, &rec)?)?;
                if let (Some(kde), true) = (&cfg.kde, ts.len() >= 2) {
                    ts = filter_background(&ts, kde)?.tracks;
                }
                let take = if cfg.kde.is_some() { k.min(ts.len()) } else { k };
                let picked = sample_point_indices(ts.len(), take, derive_seed(streams.point_sampling, &key))?;
                Some(reshape_for_model(&ts.select(&picked))?)
            }
            None => None,
        };
        items.push(Prepared { frames, motion, label: sample.label, id: sample.id.clone() });
    }
    collate(items, model, DType::F32)
}

/// Where KDE filtering sits relative to random point subsampling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdeStage {
    /// Filter all tracks of the clip, then subsample.
    #[default]
    BeforeSampling,
    /// Subsample first, then filter the selection.
    AfterSampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Points per clip; `None` feeds every track.
    pub points: Option<usize>,
    /// Point selection is keyed by this seed and the sample id, so every
    /// model evaluated with the same seed sees the same points.
    pub seed: u64,
    pub kde: Option<KdeConfig>,
    pub kde_stage: KdeStage,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { points: None, seed: 1, kde: None, kde_stage: KdeStage::default(), batch_size: 32 }
    }
}

/// Indices of the tracks a model sees for `sample` under `opts`, before any
/// KDE filtering. Identical for every model configuration.
pub fn eval_point_selection(sample: &VideoSample, opts: &EvalOptions) -> Result<Vec<usize>, TrainError> {
    let p = sample.tracks.len();
    let k = opts.points.unwrap_or(p);
    Ok(sample_point_indices(p, k, derive_seed(opts.seed, &[STREAM_EVAL_POINTS, hash_str(&sample.id)]))?)
}

fn eval_item(sample: &VideoSample, model: &ModelConfig, opts: &EvalOptions) -> Result<Prepared, TrainError> {
    let (frames, tracks) = observe(sample, model, 0, FrameSampling::Uniform)?;
    let (w, h) = frames[0].dimensions();
    let [ow, oh] = model.encoder.image_size;
    let mut rec = AugmentRecord::identity(w, h);
    rec.output_size = (ow as u32, oh as u32);
    let frames = apply_to_frames(&frames, &rec)?;
    let motion = match tracks {
        Some(ts) => {
            let ts = normalize_tracks(&apply_to_tracks(&ts, &rec)?)?;
            let seed = derive_seed(opts.seed, &[STREAM_EVAL_POINTS, hash_str(&sample.id)]);
            let filter = |ts: TrackSet| -> Result<TrackSet, TrainError> {
                match &opts.kde {
                    Some(kde) if ts.len() >= 2 => Ok(filter_background(&ts, kde)?.tracks),
                    _ => Ok(ts),
                }
            };
            let chosen = match opts.kde_stage {
                KdeStage::AfterSampling => filter(ts.select(&eval_point_selection(sample, opts)?))?,
                KdeStage::BeforeSampling if opts.kde.is_some() => {
                    let kept = filter(ts)?;
                    let k = opts.points.unwrap_or(kept.len()).min(kept.len());
                    kept.select(&sample_point_indices(kept.len(), k, seed)?)
                }
                KdeStage::BeforeSampling => ts.select(&eval_point_selection(sample, opts)?),
            };
            Some(reshape_for_model(&chosen)?)
        }
        None => None,
    };
    Ok(Prepared { frames, motion, label: sample.label, id: sample.id.clone() })
}

/// Evaluation batch for the clips at `indices`.
pub fn eval_batch(source: &dyn SampleSource, indices: &[usize], model: &ModelConfig, opts: &EvalOptions, dtype: DType) -> Result<Batch, TrainError> {
    let items = indices
        .iter()
        .map(|&i| {
            let sample = source.get(i)?;
            eval_item(&sample, model, opts)
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    collate(items, model, dtype)
}

/// Model output for one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub id: String,
    pub label: usize,
    pub logits: Vec<f32>,
}

impl Prediction {
    /// Position of the true label when classes are sorted by descending
    /// logit, ties going to the lower class index.
    pub fn rank(&self) -> usize {
        let target = self.logits[self.label];
        self.logits.iter().enumerate().filter(|&(j, &v)| v > target || (v == target && j < self.label)).count()
    }

    pub fn in_top(&self, k: usize) -> bool {
        self.rank() < k
    }
}

/// Runs the model over every clip of `source` in index order.
pub fn predict(model: &TrecModel, source: &dyn SampleSource, opts: &EvalOptions) -> Result<Vec<Prediction>, TrainError> {
    let indices: Vec<usize> = (0..source.len()).collect();
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(opts.batch_size.max(1)) {
        let batch = eval_batch(source, chunk, model.config(), opts, model.dtype())?;
        let logits = model.forward(&batch.input, None)?.to_dtype(DType::F32)?.to_vec2::<f32>()?;
        for ((&index, row), (id, label)) in chunk.iter().zip(logits).zip(batch.ids.into_iter().zip(batch.labels)) {
            out.push(Prediction { index, id, label, logits: row });
        }
    }
    Ok(out)
}
