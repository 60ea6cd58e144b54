use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use trec_core::data::{
    import_external_tracks, read_tracks, write_frame_stack, write_tracks, DatasetManifest, InMemorySource, LayoutDescriptor,
    ManifestEntry, ManifestSource, SampleSource, Split, SyntheticDataset,
};
use trec_core::kde::{filter_background, Bandwidth, KdeConfig};
use trec_core::track::normalize_tracks;
use trec_evalbench::experiments::TREC;
use trec_evalbench::{
    run_kde_pipeline, run_point_ablation, run_single_image, run_track_vs_notrack, train_variants, write_ablation_plot, Setup,
    Variant,
};
use trec_model::{Mode, TrecModel};
use trec_train::{fit, EvalOptions, FitOptions};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::visualize::{filtered_pair, overlay};
use crate::{ExperimentArgs, ExperimentName, FilterArgs, ImportArgs, KdeFlags, Result, SynthArgs, TrainArgs, VisualizeArgs};

type Sources = (Box<dyn SampleSource>, Box<dyn SampleSource>);

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn file_stem(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::Usage(format!("{} has no file name", path.display())))
}

/// Training and validation clips from the manifests, or generated in memory.
/// Sets the model's class count from the data.
fn open_data(cfg: &mut ExperimentConfig) -> Result<Sources> {
    let d = &cfg.data;
    let (train, val): Sources = match (&d.train_manifest, &d.val_manifest) {
        (Some(t), Some(v)) => (Box::new(ManifestSource::open(t)?), Box::new(ManifestSource::open(v)?)),
        (None, None) => {
            let ds = &d.synthetic;
            let val_ds = SyntheticDataset { samples_per_class: d.val_samples_per_class.unwrap_or(ds.samples_per_class), ..ds.clone() };
            log::info!("generating {} training and {} validation clips", ds.len(), val_ds.len());
            (
                Box::new(InMemorySource::new(ds.generate(Split::Train)?, ds.class_names())?),
                Box::new(InMemorySource::new(val_ds.generate(Split::Val)?, ds.class_names())?),
            )
        }
        _ => return Err(CliError::Usage("data.train_manifest and data.val_manifest must be given together".into())),
    };
    if train.class_names() != val.class_names() {
        return Err(CliError::Data("training and validation sets list different classes".into()));
    }
    cfg.model.num_classes = train.num_classes();
    Ok((train, val))
}

fn apply_kde_flags(kde: &mut KdeConfig, flags: &KdeFlags) -> Result<()> {
    if let Some(q) = flags.quantile {
        kde.quantile = q;
    }
    if let Some(h) = flags.bandwidth {
        kde.bandwidth = Bandwidth::Fixed(h);
    }
    Ok(kde.validate()?)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(a.common.config.as_deref())?;
    let ds = &mut cfg.data.synthetic;
    if let Some(n) = a.samples_per_class {
        ds.samples_per_class = n;
    }
    if let Some(c) = a.class_set {
        ds.class_set = c.into();
    }
    if let Some(p) = a.points {
        ds.points = p;
    }
    if let Some(s) = a.seed {
        ds.seed = s;
    }
    if a.val_samples_per_class.is_some() {
        cfg.data.val_samples_per_class = a.val_samples_per_class;
    }
    let splits = a
        .splits
        .iter()
        .map(|s| s.parse::<Split>().map_err(CliError::Usage))
        .collect::<Result<Vec<Split>>>()?;
    let per_split = |split: Split| match split {
        Split::Train => cfg.data.synthetic.samples_per_class,
        _ => cfg.data.val_samples_per_class.unwrap_or(cfg.data.synthetic.samples_per_class),
    };
    if let Some(&s) = splits.iter().find(|&&s| per_split(s) == 0) {
        return Err(CliError::Usage(format!("zero samples requested for the {s} split")));
    }
    let out = cfg.out_dir(a.common.out.as_deref(), "synth");
    cfg.snapshot(&out)?;
    for &split in &splits {
        let ds = SyntheticDataset { samples_per_class: per_split(split), ..cfg.data.synthetic.clone() };
        let rel = PathBuf::from(split.as_str());
        for sub in ["frames", "tracks"] {
            create_dir(&out.join(&rel).join(sub))?;
        }
        let mut entries = Vec::with_capacity(ds.len());
        for i in 0..ds.len() {
            let sample = ds.generate_one(split, i)?.sample;
            let video_path = rel.join("frames").join(format!("{}.png", sample.id));
            let track_path = rel.join("tracks").join(format!("{}.trks", sample.id));
            write_frame_stack(&sample.frames, out.join(&video_path))?;
            write_tracks(&sample.tracks, out.join(&track_path))?;
            entries.push(ManifestEntry { id: sample.id, video_path, track_path, label: sample.label });
        }
        let manifest = DatasetManifest { entries, class_names: ds.class_names(), split };
        let path = out.join(format!("{split}.manifest"));
        manifest.save(&path)?;
        println!("{}: {} clips", path.display(), manifest.len());
    }
    Ok(())
}

pub fn import_tracks(a: ImportArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(a.common.config.as_deref())?;
    let layout = LayoutDescriptor::load(&a.layout)?;
    let out = cfg.out_dir(a.common.out.as_deref(), "import-tracks");
    cfg.snapshot(&out)?;
    write_json(&out.join("layout.json"), &json!(layout))?;
    for src in &a.sources {
        let (ts, report) =
            import_external_tracks(src, &layout).map_err(|e| CliError::Data(format!("{}: {e}", src.display())))?;
        let path = out.join(format!("{}.trks", file_stem(src)?));
        write_tracks(&ts, &path)?;
        println!("{}: {} points, {} frames, {} clamped", path.display(), ts.len(), ts.num_frames(), report.clamped);
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(a.common.config.as_deref())?;
    if let Some(m) = a.mode {
        cfg.model.mode = m;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let (train, val) = open_data(&mut cfg)?;
    let out = cfg.out_dir(a.common.out.as_deref(), "train");
    cfg.snapshot(&out)?;
    let opts = FitOptions { out_dir: Some(out.clone()), resume: a.resume, stop_after: None };
    let outcome = fit(train.as_ref(), Some(val.as_ref()), &cfg.model, &cfg.train, &opts)?;
    let top1 = outcome.history.iter().rev().find(|r| r.split == "val" && r.metric == "top1").map(|r| r.value);
    match top1 {
        Some(v) => println!("{}: val top-1 {:.2}%", out.display(), 100.0 * v),
        None => println!("{}: trained", out.display()),
    }
    Ok(())
}

pub fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(a.common.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if a.checkpoint.is_some() {
        cfg.ablation.checkpoint = a.checkpoint;
    }
    if cfg.seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is needed".into()));
    }
    let out = cfg.out_dir(a.common.out.as_deref(), &format!("experiment/{}", a.name.as_str()));
    let (train, val) = open_data(&mut cfg)?;
    cfg.snapshot(&out)?;
    let setup = Setup {
        train: train.as_ref(),
        val: val.as_ref(),
        model: cfg.model.clone(),
        train_cfg: cfg.train.clone(),
        seeds: cfg.seeds.clone(),
        out_dir: Some(out.clone()),
    };
    let report = match a.name {
        ExperimentName::TrackVsNotrack => run_track_vs_notrack(&setup)?.0,
        ExperimentName::SingleImage => run_single_image(&setup)?.0,
        ExperimentName::Kde => run_kde_pipeline(&setup, &cfg.kde)?.0,
        ExperimentName::PointAblation => {
            let model = match &cfg.ablation.checkpoint {
                Some(path) => TrecModel::load(path, None)?,
                None => {
                    let v = Variant { name: TREC.into(), model: cfg.model.with_mode(Mode::Trec), train: cfg.train.clone() };
                    let seeds = vec![cfg.seeds[0]];
                    let mut trained = train_variants(&Setup { seeds, ..setup }, &[v])?;
                    trained.remove(0).outcome.model
                }
            };
            let base = EvalOptions { batch_size: cfg.train.batch_size, ..EvalOptions::default() };
            let report = run_point_ablation(&model, val.as_ref(), &cfg.ablation.counts, &cfg.ablation.seeds, &base)?;
            report.write(&out)?;
            write_ablation_plot(&report, &out.join("accuracy_vs_points.svg"))?;
            report
        }
    };
    println!("{}", report.table());
    println!("report written to {}", out.display());
    Ok(())
}

pub fn filter_kde(a: FilterArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(a.common.config.as_deref())?;
    apply_kde_flags(&mut cfg.kde.kde, &a.kde)?;
    let out = cfg.out_dir(a.common.out.as_deref(), "filter-kde");
    cfg.snapshot(&out)?;
    for path in &a.tracks {
        let ts = read_tracks(path)?;
        let res = filter_background(&normalize_tracks(&ts)?, &cfg.kde.kde)?;
        let stem = file_stem(path)?;
        write_tracks(&ts.select(&res.retained), out.join(format!("{stem}.trks")))?;
        write_json(
            &out.join(format!("{stem}.kde.json")),
            &json!({ "source": path, "bandwidth": res.bandwidth, "retained": res.retained, "densities": res.densities }),
        )?;
        println!("{}: kept {} of {} points (bandwidth {:.4})", path.display(), res.retained.len(), ts.len(), res.bandwidth);
    }
    Ok(())
}

pub fn visualize(a: VisualizeArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(a.common.config.as_deref())?;
    apply_kde_flags(&mut cfg.kde.kde, &a.kde_flags)?;
    let source = ManifestSource::open(&a.manifest)?;
    let index = (0..source.len())
        .find(|&i| source.id(i) == a.sample)
        .ok_or_else(|| CliError::Usage(format!("no clip {:?} in {}", a.sample, a.manifest.display())))?;
    let sample = source.get(index)?;
    let out = cfg.out_dir(a.common.out.as_deref(), "visualize");
    cfg.snapshot(&out)?;
    let path = out.join(format!("{}.png", a.sample));
    let frame = &sample.frames[0];
    let img = if sample.tracks.is_empty() {
        log::warn!("{} has no tracks; writing its first frame unchanged", a.sample);
        frame.clone()
    } else if a.kde {
        let res = filter_background(&normalize_tracks(&sample.tracks)?, &cfg.kde.kde)?;
        log::info!("kept {} of {} points", res.retained.len(), sample.tracks.len());
        filtered_pair(frame, &sample.tracks, &res.retained, a.scale)
    } else {
        overlay(frame, &sample.tracks, None, a.scale)
    };
    img.save(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}
