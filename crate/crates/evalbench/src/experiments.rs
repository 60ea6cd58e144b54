use std::path::{Path, PathBuf};

use serde_json::json;
use trec_core::data::SampleSource;
use trec_core::kde::KdeConfig;
use trec_model::{Mode, ModelConfig, TrecModel};
use trec_train::{fit, predict, EvalOptions, FitOptions, FitOutcome, KdeStage, TrainConfig};

use crate::report::{EvalReport, SampleRecord};
use crate::EvalError;

/// Data and configuration shared by the variants of a training experiment.
pub struct Setup<'a> {
    pub train: &'a dyn SampleSource,
    pub val: &'a dyn SampleSource,
    pub model: ModelConfig,
    pub train_cfg: TrainConfig,
    /// One training run per seed and variant; variants of the same seed share
    /// initialization seed, data order and evaluation points.
    pub seeds: Vec<u64>,
    /// Runs go to `<out_dir>/<variant>/seed-<seed>`; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
}

impl Setup<'_> {
    fn snapshot(&self) -> serde_json::Value {
        json!({ "model": self.model, "train": self.train_cfg, "seeds": self.seeds })
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions { points: self.train_cfg.eval_points, seed: self.train_cfg.eval_seed, batch_size: self.train_cfg.batch_size, ..EvalOptions::default() }
    }
}

pub struct TrainedVariant {
    pub variant: String,
    pub seed: u64,
    pub outcome: FitOutcome,
}

pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub const TREC: &str = "trec";
pub const BASELINE: &str = "baseline";
pub const SINGLE_IMAGE_TREC: &str = "single_image_trec";
pub const SINGLE_IMAGE_BASELINE: &str = "single_image_baseline";
pub const VANILLA: &str = "vanilla TRec";
pub const VANILLA_KDE: &str = "vanilla TRec + KDE";
pub const FILTER_KDE: &str = "FilterTRec + KDE";

fn run_dir(setup: &Setup, variant: &str, seed: u64) -> Option<PathBuf> {
    setup.out_dir.as_ref().map(|d| d.join(variant.replace([' ', '+'], "_").replace("__", "_")).join(format!("seed-{seed}")))
}

/// Trains every variant under every seed of `setup`.
pub fn train_variants(setup: &Setup, variants: &[Variant]) -> Result<Vec<TrainedVariant>, EvalError> {
    let mut out = Vec::new();
    for &seed in &setup.seeds {
        for v in variants {
            let cfg = TrainConfig { seed, ..v.train.clone() };
            let opts = FitOptions { out_dir: run_dir(setup, &v.name, seed), ..FitOptions::default() };
            log::info!("training {} (seed {seed})", v.name);
            let outcome = fit(setup.train, Some(setup.val), &v.model, &cfg, &opts)?;
            out.push(TrainedVariant { variant: v.name.clone(), seed, outcome });
        }
    }
    Ok(out)
}

/// Records of each trained variant on the validation set under `opts`.
fn evaluate_trained(trained: &[TrainedVariant], val: &dyn SampleSource, opts: &EvalOptions) -> Result<Vec<SampleRecord>, EvalError> {
    let mut records = Vec::new();
    for t in trained {
        let preds = match t.outcome.val_predictions.len() == val.len() {
            true => t.outcome.val_predictions.clone(),
            false => predict(&t.outcome.model, val, opts)?,
        };
        records.extend(SampleRecord::from_predictions(&t.variant, t.seed, &preds));
    }
    Ok(records)
}

fn mode_pair(setup: &Setup, experiment: &str, modes: [(&str, Mode); 2]) -> Result<(EvalReport, Vec<TrainedVariant>), EvalError> {
    let variants: Vec<Variant> = modes
        .iter()
        .map(|&(name, mode)| Variant { name: name.into(), model: setup.model.with_mode(mode), train: setup.train_cfg.clone() })
        .collect();
    let trained = train_variants(setup, &variants)?;
    let records = evaluate_trained(&trained, setup.val, &setup.eval_options())?;
    let names: Vec<String> = variants.iter().map(|v| v.name.clone()).collect();
    let report = EvalReport::new(experiment, &names, records, setup.model.num_classes, setup.snapshot());
    if let Some(dir) = &setup.out_dir {
        report.write(dir)?;
    }
    Ok((report, trained))
}

/// The same architecture trained with and without point tracks.
pub fn run_track_vs_notrack(setup: &Setup) -> Result<(EvalReport, Vec<TrainedVariant>), EvalError> {
    mode_pair(setup, "track_vs_notrack", [(TREC, Mode::Trec), (BASELINE, Mode::Baseline)])
}

/// First frame only, with and without tracks over the full clip.
pub fn run_single_image(setup: &Setup) -> Result<(EvalReport, Vec<TrainedVariant>), EvalError> {
    mode_pair(setup, "single_image", [(SINGLE_IMAGE_TREC, Mode::SingleImageTrec), (SINGLE_IMAGE_BASELINE, Mode::SingleImageBaseline)])
}

/// Evaluates one model with `counts` points per clip, one row per count.
/// Point subsets are drawn per seed and sample id, independent of the model.
pub fn run_point_ablation(
    model: &TrecModel,
    val: &dyn SampleSource,
    counts: &[usize],
    seeds: &[u64],
    base: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if !model.config().mode.uses_tracks() {
        return Err(EvalError::Argument(format!("point ablation needs a track model, got {}", model.config().mode)));
    }
    let mut records = Vec::new();
    let names: Vec<String> = counts.iter().map(usize::to_string).collect();
    for (&count, name) in counts.iter().zip(&names) {
        for &seed in seeds {
            let opts = EvalOptions { points: Some(count), seed, ..base.clone() };
            let preds = predict(model, val, &opts)?;
            records.extend(SampleRecord::from_predictions(name, seed, &preds));
        }
        log::info!("ablation: {count} points done");
    }
    let config = json!({ "model": model.config(), "counts": counts, "seeds": seeds, "eval": base });
    Ok(EvalReport::new("point_ablation", &names, records, model.config().num_classes, config))
}

/// `(count, top-1)` pairs of an ablation report in row order.
pub fn ablation_curve(report: &EvalReport) -> Vec<(usize, f64)> {
    report.rows.iter().filter_map(|r| Some((r.variant.parse().ok()?, r.top1.mean))).collect()
}

/// Options of the background-filtering experiment.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeExperiment {
    pub kde: KdeConfig,
    /// Where filtering happens relative to point subsampling at evaluation;
    /// both filtered rows use the same setting, so they see identical points.
    pub eval_stage: KdeStage,
}

impl Default for KdeExperiment {
    fn default() -> Self {
        Self { kde: KdeConfig::default(), eval_stage: KdeStage::AfterSampling }
    }
}

/// Vanilla model on raw points, the same model on filtered points, and a
/// model trained on filtered points evaluated on filtered points.
pub fn run_kde_experiment(
    vanilla: &[(u64, &TrecModel)],
    filter_trec: &[(u64, &TrecModel)],
    val: &dyn SampleSource,
    exp: &KdeExperiment,
    base: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let filtered = EvalOptions { kde: Some(exp.kde), kde_stage: exp.eval_stage, ..base.clone() };
    let plain = EvalOptions { kde: None, ..base.clone() };
    let mut records = Vec::new();
    let mut num_classes = 0;
    for &(seed, m) in vanilla {
        num_classes = m.config().num_classes;
        records.extend(SampleRecord::from_predictions(VANILLA, seed, &predict(m, val, &plain)?));
        records.extend(SampleRecord::from_predictions(VANILLA_KDE, seed, &predict(m, val, &filtered)?));
    }
    for &(seed, m) in filter_trec {
        num_classes = m.config().num_classes;
        records.extend(SampleRecord::from_predictions(FILTER_KDE, seed, &predict(m, val, &filtered)?));
    }
    let names = [VANILLA, VANILLA_KDE, FILTER_KDE].map(String::from);
    let config = json!({ "kde": exp, "eval": base });
    Ok(EvalReport::new("kde", &names, records, num_classes, config))
}

/// Trains the vanilla and the filtered-input model per seed, then runs
/// [`run_kde_experiment`].
pub fn run_kde_pipeline(setup: &Setup, exp: &KdeExperiment) -> Result<(EvalReport, Vec<TrainedVariant>), EvalError> {
    let model = setup.model.with_mode(Mode::Trec);
    let variants = [
        Variant { name: VANILLA.into(), model: model.clone(), train: TrainConfig { kde: None, ..setup.train_cfg.clone() } },
        Variant { name: "FilterTRec".into(), model, train: TrainConfig { kde: Some(exp.kde), ..setup.train_cfg.clone() } },
    ];
    let trained = train_variants(setup, &variants)?;
    let pick = |name: &str| trained.iter().filter(|t| t.variant == name).map(|t| (t.seed, &t.outcome.model)).collect::<Vec<_>>();
    let mut report = run_kde_experiment(&pick(VANILLA), &pick("FilterTRec"), setup.val, exp, &setup.eval_options())?;
    report.config = json!({ "setup": setup.snapshot(), "experiment": report.config });
    if let Some(dir) = &setup.out_dir {
        report.write(dir)?;
    }
    Ok((report, trained))
}

/// Writes an accuracy-versus-point-count plot of an ablation report.
pub fn write_ablation_plot(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    crate::plot::accuracy_vs_points(&ablation_curve(report), path)
}
