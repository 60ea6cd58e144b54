use std::collections::BTreeMap;

use candle_core::{DType, Device};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trec_core::augment::AugmentPolicy;
use trec_core::data::{InMemorySource, SampleSource, Split, SyntheticDataset};
use trec_core::kde::KdeConfig;
use trec_core::{seed, TrackSet, VideoSample};
use trec_evalbench::experiments::{BASELINE, FILTER_KDE, TREC, VANILLA, VANILLA_KDE};
use trec_evalbench::report::{BOOTSTRAP_RESAMPLES, BOOTSTRAP_SEED};
use trec_evalbench::*;
use trec_model::{EncoderConfig, Mode, ModelConfig, TrecModel};
use trec_train::{predict, EvalOptions, KdeStage, TrainConfig};

fn small(classes: usize, mode: Mode) -> ModelConfig {
    ModelConfig {
        d_model: 32,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 64,
        track_hidden: 32,
        encoder: EncoderConfig { patch: 8, channels: vec![8, 8, 8, 16], image_size: [64, 64], pretrained: None },
        ..ModelConfig::tiny(classes, mode)
    }
}

fn quick() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        lr_transformer: 1e-3,
        lr_backbone: 1e-4,
        epochs: 1,
        points: [8, 16],
        eval_points: Some(16),
        augment: AugmentPolicy { flip_probability: 0.0, output_size: [64, 64], ..AugmentPolicy::default() },
        ..TrainConfig::default()
    }
}

fn source(per_class: usize, split: Split) -> InMemorySource {
    let ds = SyntheticDataset { samples_per_class: per_class, points: 24, seed: 5, ..Default::default() };
    InMemorySource::new(ds.generate(split).unwrap(), ds.class_names()).unwrap()
}

fn relabel(src: &InMemorySource, class_names: Vec<String>, f: impl Fn(&VideoSample) -> VideoSample) -> InMemorySource {
    InMemorySource::new(src.samples().iter().map(|s| f(s)).collect(), class_names).unwrap()
}

fn without_tracks(src: &InMemorySource) -> InMemorySource {
    relabel(src, src.class_names().to_vec(), |s| {
        let t = &s.tracks;
        VideoSample { tracks: TrackSet::empty(t.num_frames(), t.width(), t.height(), t.fps()).unwrap(), ..s.clone() }
    })
}

/// A model of `mode` carrying the weights of `from`.
fn same_weights(from: &TrecModel, mode: Mode) -> TrecModel {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.safetensors");
    from.save(&path).unwrap();
    let to = TrecModel::new(from.config().with_mode(mode), 0, DType::F32).unwrap();
    to.params().assign_from(&candle_core::safetensors::load(&path, &Device::Cpu).unwrap(), "").unwrap();
    to
}

fn logits(model: &TrecModel, src: &dyn SampleSource, opts: &EvalOptions) -> Vec<Vec<u32>> {
    predict(model, src, opts).unwrap().iter().map(|p| p.logits.iter().map(|v| v.to_bits()).collect()).collect()
}

fn ranks(report: &EvalReport, variant: &str) -> Vec<usize> {
    report.records.iter().filter(|r| r.variant == variant).map(|r| r.rank).collect()
}

// recomputes one accuracy from per-sample correctness, without the report code
fn recompute(correct: &[bool], labels: &[usize]) -> (f64, [f64; 2], f64) {
    let n = correct.len();
    let hits = correct.iter().filter(|&&c| c).count();
    let mut per_class: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for (&c, &l) in correct.iter().zip(labels) {
        let e = per_class.entry(l).or_default();
        e.0 += f64::from(u8::from(c));
        e.1 += 1.0;
    }
    let accs: Vec<f64> = per_class.values().map(|(h, m)| 100.0 * h / m).collect();
    let mu = accs.iter().sum::<f64>() / accs.len() as f64;
    let std = (accs.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / accs.len() as f64).sqrt();
    let mut rng = seed::rng(BOOTSTRAP_SEED, &[]);
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let k = (0..n).filter(|_| correct[rng.random_range(0..n)]).count();
            100.0 * k as f64 / n as f64
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = means[(0.025 * BOOTSTRAP_RESAMPLES as f64) as usize];
    let hi = means[(0.975 * BOOTSTRAP_RESAMPLES as f64) as usize];
    (100.0 * hits as f64 / n as f64, [lo, hi], std)
}

#[test]
fn spread_matches_an_independent_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let classes = 7;
    let records: Vec<SampleRecord> = ["a", "b"]
        .iter()
        .flat_map(|v| (0..300).map(move |i| (v, i)))
        .map(|(v, i)| SampleRecord {
            variant: v.to_string(),
            seed: i % 2,
            index: i as usize,
            id: format!("c{i}"),
            label: (i as usize * 5) % classes,
            rank: rng.random_range(0..classes),
        })
        .collect();
    let report = EvalReport::new("spread", &["a".into(), "b".into()], records.clone(), classes, serde_json::Value::Null);
    for row in &report.rows {
        let mine: Vec<&SampleRecord> = records.iter().filter(|r| r.variant == row.variant).collect();
        let labels: Vec<usize> = mine.iter().map(|r| r.label).collect();
        for (acc, k) in [(&row.top1, 1), (&row.top5, 5)] {
            let correct: Vec<bool> = mine.iter().map(|r| r.rank < k).collect();
            let (mean, ci, std) = recompute(&correct, &labels);
            assert!((acc.mean - mean).abs() < 1e-10);
            assert!((acc.ci95[0] - ci[0]).abs() < 1e-10 && (acc.ci95[1] - ci[1]).abs() < 1e-10, "{:?} vs {ci:?}", acc.ci95);
            assert!((acc.class_std - std).abs() < 1e-10);
            assert!(acc.ci95[0] <= acc.mean && acc.mean <= acc.ci95[1]);
        }
        assert!(row.top1.mean <= row.top5.mean);
        assert_eq!(row.samples, 300);
        assert_eq!(row.seeds, [0, 1]);
    }
}

proptest! {
    #[test]
    fn topk_is_monotone_in_k(rows in prop::collection::vec(prop::collection::vec(-3.0f32..3.0, 6), 1..20), seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = rows.iter().map(|_| rng.random_range(0..6)).collect();
        let acc: Vec<f64> = (1..=6).map(|k| topk_accuracy(&rows, &labels, k).unwrap()).collect();
        prop_assert!(acc.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(acc[5], 1.0);
    }
}

#[test]
fn one_class_data_is_always_right() {
    let names = vec!["only".to_string()];
    let train = relabel(&source(1, Split::Train), names.clone(), |s| VideoSample { label: 0, ..s.clone() });
    let val = relabel(&source(1, Split::Val), names, |s| VideoSample { label: 0, ..s.clone() });
    let setup = Setup { train: &train, val: &val, model: small(1, Mode::Trec), train_cfg: quick(), seeds: vec![0], out_dir: None };
    let (report, _) = run_track_vs_notrack(&setup).unwrap();
    for v in [TREC, BASELINE] {
        let row = report.row(v).unwrap();
        assert_eq!((row.top1.mean, row.top5.mean, row.top5_k, row.samples), (100.0, 100.0, 1, 8));
    }
}

#[test]
fn reruns_reproduce_the_report() {
    let train = source(1, Split::Train);
    let val = source(1, Split::Val);
    let model = ModelConfig { dropout: 0.1, ..small(8, Mode::Trec) };
    let setup = Setup { train: &train, val: &val, model, train_cfg: quick(), seeds: vec![0, 1], out_dir: None };
    let (a, _) = run_single_image(&setup).unwrap();
    let (b, _) = run_single_image(&setup).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records, b.records);
    assert_eq!(a.rows[0].seeds, [0, 1]);
}

#[test]
fn ablation_extremes() {
    let val = source(2, Split::Val);
    let model = TrecModel::new(small(8, Mode::Trec), 7, DType::F32).unwrap();
    let base = EvalOptions { batch_size: 8, ..EvalOptions::default() };
    let report = run_point_ablation(&model, &val, &[24, 5, 0], &[1, 2], &base).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.variant.as_str()).collect::<Vec<_>>(), ["24", "5", "0"]);
    assert!(report.rows.iter().all(|r| r.samples == 32));
    for seed in [1, 2] {
        let opts = EvalOptions { seed, ..base.clone() };
        // every point is the standard evaluation
        assert_eq!(
            logits(&model, &val, &EvalOptions { points: Some(24), ..opts.clone() }),
            logits(&model, &val, &EvalOptions { points: None, ..opts.clone() })
        );
        // no points is the same clip with its tracks removed
        assert_eq!(
            logits(&model, &val, &EvalOptions { points: Some(0), ..opts.clone() }),
            logits(&model, &without_tracks(&val), &EvalOptions { points: None, ..opts })
        );
    }
    let standard: Vec<usize> = predict(&model, &val, &EvalOptions { points: None, seed: 1, ..base.clone() })
        .unwrap()
        .iter()
        .map(|p| p.rank())
        .collect();
    assert_eq!(ranks(&report, "24")[..16], standard[..]);
    let baseline = TrecModel::new(small(8, Mode::Baseline), 7, DType::F32).unwrap();
    assert!(matches!(run_point_ablation(&baseline, &val, &[5], &[1], &base), Err(EvalError::Argument(_))));
}

#[test]
fn single_image_trec_without_points_is_the_single_image_baseline() {
    let val = source(1, Split::Val);
    let trec = TrecModel::new(small(8, Mode::SingleImageTrec), 3, DType::F32).unwrap();
    let baseline = same_weights(&trec, Mode::SingleImageBaseline);
    let opts = EvalOptions { batch_size: 8, ..EvalOptions::default() };
    assert_eq!(
        logits(&trec, &val, &EvalOptions { points: Some(0), ..opts.clone() }),
        logits(&baseline, &val, &EvalOptions { points: None, ..opts.clone() })
    );
    assert_ne!(logits(&trec, &val, &opts), logits(&baseline, &val, &opts));
}

#[test]
fn kde_rows_coincide_when_nothing_is_filtered() {
    let val = source(1, Split::Val);
    let a = TrecModel::new(small(8, Mode::Trec), 1, DType::F32).unwrap();
    let b = TrecModel::new(small(8, Mode::Trec), 2, DType::F32).unwrap();
    let exp = KdeExperiment { kde: KdeConfig::default(), eval_stage: KdeStage::AfterSampling };
    // a single sampled point leaves the filter nothing to remove
    let base = EvalOptions { points: Some(1), batch_size: 8, ..EvalOptions::default() };
    let report = run_kde_experiment(&[(0, &a)], &[(0, &b)], &val, &exp, &base).unwrap();
    assert_eq!(ranks(&report, VANILLA), ranks(&report, VANILLA_KDE));
    assert_eq!(report.row(VANILLA).unwrap().top1, report.row(VANILLA_KDE).unwrap().top1);
    assert_eq!(report.rows.len(), 3);

    // with real filtering the vanilla model's inputs change
    let full = EvalOptions { points: None, ..base };
    let report = run_kde_experiment(&[(0, &a)], &[(0, &b)], &val, &exp, &full).unwrap();
    let plain = logits(&a, &val, &full);
    let filtered = logits(&a, &val, &EvalOptions { kde: Some(exp.kde), kde_stage: exp.eval_stage, ..full.clone() });
    assert_ne!(plain, filtered);
    assert_eq!(report.row(FILTER_KDE).unwrap().samples, 8);
    let again = run_kde_experiment(&[(0, &a)], &[(0, &b)], &val, &exp, &full).unwrap();
    assert_eq!(report, again);
}

#[test]
fn reports_are_written_as_text_json_and_records() {
    let val = source(1, Split::Val);
    let model = TrecModel::new(small(8, Mode::Trec), 1, DType::F32).unwrap();
    let report = run_point_ablation(&model, &val, &[16, 0], &[1], &EvalOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    write_ablation_plot(&report, &dir.path().join("curve.svg")).unwrap();
    let json: EvalReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json.rows, report.rows);
    let lines = std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 16);
    assert!(std::fs::read_to_string(dir.path().join("report.txt")).unwrap().contains("top-1"));
    assert!(std::fs::read_to_string(dir.path().join("curve.svg")).unwrap().starts_with("<svg"));
}
