use std::collections::HashSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use trec_core::data::SampleSource;
use trec_core::seed::{self, derive_seed};
use trec_core::track::randomized_point_count;
use trec_model::{ModelConfig, ParamGroup, TrecModel};

use crate::batch::{self, Batch, EvalOptions, Prediction};
use crate::{AdamW, LrSchedule, TrainConfig, TrainError};

pub const STATE_VERSION: u32 = 1;

/// One line of the metric history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: u64,
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

impl HistoryRecord {
    fn new(step: u64, epoch: usize, split: &str, metric: &str, value: f64) -> Self {
        Self { step, epoch, split: split.into(), metric: metric.into(), value }
    }
}

/// Seeds of the random streams. Every draw is derived from one of these and
/// the epoch, step or sample index, so counters are all a resume needs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStreams {
    pub data_order: u64,
    pub augmentation: u64,
    pub point_sampling: u64,
    pub point_count: u64,
    pub dropout: u64,
}

impl RngStreams {
    fn new(seed: u64) -> Self {
        Self {
            data_order: derive_seed(seed, &[batch::STREAM_ORDER]),
            augmentation: derive_seed(seed, &[batch::STREAM_AUGMENT]),
            point_sampling: derive_seed(seed, &[batch::STREAM_POINTS]),
            point_count: derive_seed(seed, &[batch::STREAM_COUNT]),
            dropout: derive_seed(seed, &[batch::STREAM_DROPOUT]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub version: u32,
    /// Completed epochs.
    pub epoch: usize,
    pub global_step: u64,
    pub best_val_top1: Option<f64>,
    pub rng: RngStreams,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Where checkpoints, state and history go. Nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    /// Continue from the state saved in `out_dir`, if any.
    pub resume: bool,
    /// Stop after this many completed epochs (the schedule still spans
    /// `epochs`); used to interrupt and resume.
    pub stop_after: Option<usize>,
}

pub struct FitOutcome {
    pub model: TrecModel,
    pub history: Vec<HistoryRecord>,
    pub best_checkpoint: Option<PathBuf>,
    pub state: TrainState,
    /// Validation predictions of the last validated epoch.
    pub val_predictions: Vec<Prediction>,
}

/// Forward, cross-entropy, backward and one optimizer step.
pub fn train_step(
    model: &TrecModel,
    optimizer: &mut AdamW,
    batch: &Batch,
    lrs: (f64, f64),
    step: u64,
    grad_clip: Option<f64>,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<f64, TrainError> {
    let logits = model.forward(&batch.input, dropout)?;
    let loss = model.loss(&logits, &batch.labels)?;
    let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let grads = loss.backward()?;
    if !value.is_finite() {
        return Err(TrainError::NonFinite {
            step,
            batch_ids: batch.ids.clone(),
            lr: lrs,
            grad_norms: AdamW::grad_norms(model.params(), &grads)?,
        });
    }
    let scale = match grad_clip {
        Some(limit) => {
            let total = AdamW::grad_norms(model.params(), &grads)?.values().map(|n| n * n).sum::<f64>().sqrt();
            if total > limit { limit / total } else { 1.0 }
        }
        None => 1.0,
    };
    optimizer.step(
        model.params(),
        &grads,
        |g| match g {
            ParamGroup::Transformer => lrs.0,
            ParamGroup::Backbone => lrs.1,
        },
        scale,
    )?;
    Ok(value)
}

fn write_history(path: &Path, history: &[HistoryRecord]) -> Result<(), TrainError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| TrainError::io(path, e))?);
    for r in history {
        writeln!(file, "{}", serde_json::to_string(r)?).map_err(|e| TrainError::io(path, e))?;
    }
    file.flush().map_err(|e| TrainError::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRecord>, TrainError> {
    let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), TrainError> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| TrainError::io(path, e))
}

/// Accuracy (fraction) of predictions whose label is in the top `k`.
pub fn accuracy(predictions: &[Prediction], k: usize) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    predictions.iter().filter(|p| p.in_top(k)).count() as f64 / predictions.len() as f64
}

/// Trains `model_cfg` on `train`, validating on `val`.
pub fn fit(
    train: &dyn SampleSource,
    val: Option<&dyn SampleSource>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    opts: &FitOptions,
) -> Result<FitOutcome, TrainError> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::Dataset("training set is empty".into()));
    }
    if train.num_classes() != model_cfg.num_classes {
        return Err(TrainError::Dataset(format!(
            "dataset has {} classes, model has {}",
            train.num_classes(),
            model_cfg.num_classes
        )));
    }
    if let Some(val) = val {
        let ids: HashSet<&str> = (0..train.len()).map(|i| train.id(i)).collect();
        if let Some(dup) = (0..val.len()).map(|i| val.id(i)).find(|id| ids.contains(id)) {
            return Err(TrainError::Dataset(format!("sample `{dup}` is in both train and validation sets")));
        }
    }
    let [ow, oh] = model_cfg.encoder.image_size;
    if cfg.augment.output_size != [ow as u32, oh as u32] {
        return Err(TrainError::Config(format!(
            "augmentation output {:?} differs from the encoder input {ow}x{oh}",
            cfg.augment.output_size
        )));
    }
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
    }

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let schedule = LrSchedule::new(cfg, steps_per_epoch);
    let mut model = TrecModel::new(model_cfg.clone(), derive_seed(cfg.seed, &[batch::STREAM_INIT]), DType::F32)?;
    let mut optimizer = AdamW::new(cfg);
    let mut state = TrainState {
        version: STATE_VERSION,
        epoch: 0,
        global_step: 0,
        best_val_top1: None,
        rng: RngStreams::new(cfg.seed),
        model: model_cfg.clone(),
        train: cfg.clone(),
    };
    let mut history = Vec::new();
    let paths = opts.out_dir.as_ref().map(|d| Paths::new(d));
    if let (true, Some(p)) = (opts.resume, &paths) {
        if p.state.exists() {
            let saved: TrainState = serde_json::from_str(&std::fs::read_to_string(&p.state).map_err(|e| TrainError::io(&p.state, e))?)?;
            if saved.version != STATE_VERSION || saved.model != *model_cfg || saved.train != *cfg {
                return Err(TrainError::Config(format!("{} was written for a different configuration", p.state.display())));
            }
            model = TrecModel::load(&p.last, Some(model_cfg))?;
            optimizer.load(&p.optimizer)?;
            history = read_history(&p.history)?;
            log::info!("resuming after epoch {} (step {})", saved.epoch, saved.global_step);
            state = saved;
        }
    }

    let mut best_checkpoint = paths.as_ref().map(|p| p.best.clone()).filter(|b| b.exists());
    let mut val_predictions = Vec::new();
    let eval_opts = EvalOptions { points: cfg.eval_points, seed: cfg.eval_seed, batch_size: cfg.batch_size, ..EvalOptions::default() };
    let last_epoch = opts.stop_after.map_or(cfg.epochs, |s| s.min(cfg.epochs));
    while state.epoch < last_epoch {
        let epoch = state.epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(state.rng.data_order, &[epoch as u64]));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let step = state.global_step;
            let k = randomized_point_count(cfg.points[0], cfg.points[1], state.rng.point_count, step)?;
            let batch = batch::training_batch(train, chunk, epoch, k, model_cfg, cfg, &state.rng)?;
            let f = schedule.factor(step);
            let lrs = (cfg.lr_transformer * f, cfg.lr_backbone * f);
            let mut dropout_rng = (model_cfg.dropout > 0.0).then(|| seed::rng(state.rng.dropout, &[step]));
            let loss = match train_step(&model, &mut optimizer, &batch, lrs, step, cfg.grad_clip, dropout_rng.as_mut()) {
                Ok(l) => l,
                Err(e @ TrainError::NonFinite { .. }) => {
                    if let Some(dir) = &opts.out_dir {
                        let _ = std::fs::write(dir.join("nonfinite.txt"), e.to_string());
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            history.push(HistoryRecord::new(step, epoch, "train", "loss", loss));
            epoch_loss += loss * chunk.len() as f64;
            state.global_step += 1;
        }
        history.push(HistoryRecord::new(state.global_step, epoch, "train", "epoch_loss", epoch_loss / train.len() as f64));
        log::info!("epoch {} loss {:.4}", epoch + 1, epoch_loss / train.len() as f64);
        state.epoch += 1;

        let due = state.epoch % cfg.validate_every == 0 || state.epoch == cfg.epochs;
        if let (Some(val), true) = (val, due) {
            val_predictions = batch::predict(&model, val, &eval_opts)?;
            let top1 = accuracy(&val_predictions, 1);
            let top5 = accuracy(&val_predictions, 5.min(model_cfg.num_classes));
            history.push(HistoryRecord::new(state.global_step, epoch, "val", "top1", top1));
            history.push(HistoryRecord::new(state.global_step, epoch, "val", "top5", top5));
            log::info!("epoch {} val top1 {:.2}%", state.epoch, 100.0 * top1);
            if state.best_val_top1.is_none_or(|b| top1 > b) {
                state.best_val_top1 = Some(top1);
                if let Some(p) = &paths {
                    model.save(&p.best)?;
                    best_checkpoint = Some(p.best.clone());
                }
            }
        }
        if let Some(p) = &paths {
            model.save(&p.last)?;
            optimizer.save(&p.optimizer)?;
            write_history(&p.history, &history)?;
            write_json(&p.state, &state)?;
        }
    }
    Ok(FitOutcome { model, history, best_checkpoint, state, val_predictions })
}

struct Paths {
    state: PathBuf,
    last: PathBuf,
    best: PathBuf,
    optimizer: PathBuf,
    history: PathBuf,
}

impl Paths {
    fn new(dir: &Path) -> Self {
        Self {
            state: dir.join("state.json"),
            last: dir.join("last.safetensors"),
            best: dir.join("best.safetensors"),
            optimizer: dir.join("optimizer.safetensors"),
            history: dir.join("history.jsonl"),
        }
    }
}
