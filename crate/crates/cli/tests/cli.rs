use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use trec_core::data::{read_frames, read_tracks, write_frame_stack, write_tracks, DatasetManifest, ManifestEntry, Split};
use trec_core::TrackSet;

const SMALL: &str = r#"
seeds = [0]

[data]
val_samples_per_class = 1

[data.synthetic]
samples_per_class = 2
points = 24

[model]
d_model = 32
num_layers = 1
num_heads = 2
ffn_dim = 64
track_hidden = 32

[model.encoder]
channels = [8, 8, 8, 16]

[train]
batch_size = 8
epochs = 2
points = [8, 16]
eval_points = 16

[ablation]
counts = [16, 4, 0]
"#;

fn trec(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trec"))
        .args(args)
        .env("TREC_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_one_entry_per_clip_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&trec(dir.path(), &["synth", "--samples-per-class", "50", "--points", "16", "--splits", "train", "--out", s(&out)]));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let manifest = DatasetManifest::load(a.join("train.manifest")).unwrap();
    assert_eq!(manifest.len(), 400);
    assert_eq!(manifest.class_names.len(), 8);
    assert!(fs::read_to_string(a.join("config.toml")).unwrap().contains("samples_per_class = 50"));
    for e in manifest.entries.iter().step_by(37) {
        assert_eq!(fs::read(a.join(&e.track_path)).unwrap(), fs::read(b.join(&e.track_path)).unwrap());
        let ts = read_tracks(a.join(&e.track_path)).unwrap();
        assert_eq!((ts.len(), ts.num_frames()), (16, 8));
        assert_eq!(read_frames(a.join(&e.video_path), 8).unwrap().len(), 8);
    }
}

#[test]
fn synth_defaults_go_under_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    ok(&trec(dir.path(), &["synth", "--samples-per-class", "1", "--val-samples-per-class", "1", "--points", "8"]));
    for split in ["train", "val", "test"] {
        assert_eq!(DatasetManifest::load(dir.path().join(format!("synth/{split}.manifest"))).unwrap().len(), 8);
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| trec(dir.path(), args).status.code();
    assert_eq!(code(&["synth", "--samples-per-class", "0"]), Some(1));
    assert_eq!(code(&["experiment", "leaderboard"]), Some(1));
    assert_eq!(code(&["frobnicate"]), Some(1));
    let typo = dir.path().join("typo.toml");
    fs::write(&typo, "[train]\nepoch = 3\n").unwrap();
    let out = trec(dir.path(), &["train", "--config", s(&typo)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
    assert_eq!(code(&["filter-kde", "--quantile", "1.5", "missing.trks"]), Some(1));
    assert_eq!(trec(dir.path(), &["--help"]).status.code(), Some(0));
}

fn dump(dir: &Path, name: &str, points: usize, frames: usize, nan_at: Option<usize>) -> (PathBuf, PathBuf) {
    let mut bytes = Vec::new();
    for p in 0..points {
        for t in 0..frames {
            let x = if nan_at == Some(p) { f32::NAN } else { (p % 60) as f32 + t as f32 * 0.5 };
            for v in [x, (p / 60) as f32 * 2.0] {
                bytes.extend(v.to_le_bytes());
            }
        }
    }
    let data = dir.join(format!("{name}.bin"));
    fs::write(&data, bytes).unwrap();
    let layout = dir.join(format!("{name}.json"));
    let desc = format!(r#"{{"axes": "point-frame-coord", "points": {points}, "frames": {frames}, "width": 64, "height": 64}}"#);
    fs::write(&layout, desc).unwrap();
    (data, layout)
}

#[test]
fn import_tracks_accepts_tracker_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let (data, layout) = dump(dir.path(), "clip-7", 900, 4, None);
    let out = dir.path().join("imported");
    ok(&trec(dir.path(), &["import-tracks", "--layout", s(&layout), "--out", s(&out), s(&data)]));
    let ts = read_tracks(out.join("clip-7.trks")).unwrap();
    assert_eq!((ts.len(), ts.num_frames(), ts.width()), (900, 4, 64));
    assert_eq!(ts.track(61).coords()[2].x, 2.0);
    assert!(out.join("config.toml").exists() && out.join("layout.json").exists());

    let (bad, layout) = dump(dir.path(), "bad", 10, 4, Some(3));
    let res = trec(dir.path(), &["import-tracks", "--layout", s(&layout), s(&bad)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("[3]"), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn filter_kde_keeps_the_moving_object() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&trec(dir.path(), &["synth", "--samples-per-class", "1", "--class-set", "context-pack", "--points", "64", "--splits", "train", "--out", s(&data)]));
    let manifest = DatasetManifest::load(data.join("train.manifest")).unwrap();
    // the object-motion clip: background static, object moving
    let track = data.join(&manifest.entries[0].track_path);
    let out = dir.path().join("filtered");
    ok(&trec(dir.path(), &["filter-kde", "--quantile", "0.5", "--out", s(&out), s(&track)]));
    let before = read_tracks(&track).unwrap();
    let after = read_tracks(out.join(format!("{}.trks", manifest.entries[0].id))).unwrap();
    assert!(!after.is_empty() && after.len() < before.len(), "{} of {}", after.len(), before.len());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join(format!("{}.kde.json", manifest.entries[0].id))).unwrap()).unwrap();
    assert_eq!(report["retained"].as_array().unwrap().len(), after.len());
    assert_eq!(report["densities"].as_array().unwrap().len(), before.len());
}

#[test]
fn visualize_draws_over_the_first_frame() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&trec(dir.path(), &["synth", "--samples-per-class", "1", "--points", "32", "--splits", "val", "--val-samples-per-class", "1", "--out", s(&data)]));
    let manifest = DatasetManifest::load(data.join("val.manifest")).unwrap();
    let id = &manifest.entries[1].id;
    let m = data.join("val.manifest");
    ok(&trec(dir.path(), &["visualize", "--manifest", s(&m), "--sample", id, "--scale", "2"]));
    let img = image::open(dir.path().join(format!("visualize/{id}.png"))).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (128, 128));
    ok(&trec(dir.path(), &["visualize", "--manifest", s(&m), "--sample", id, "--kde", "--out", s(&dir.path().join("pair"))]));
    let pair = image::open(dir.path().join(format!("pair/{id}.png"))).unwrap().to_rgb8();
    assert_eq!(pair.dimensions(), (2 * 256 + 4, 256));
    assert_eq!(trec(dir.path(), &["visualize", "--manifest", s(&m), "--sample", "nope"]).status.code(), Some(1));
}

#[test]
fn visualize_without_points_emits_the_frame_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<RgbImage> = (0..3u8).map(|i| RgbImage::from_fn(16, 12, |x, y| Rgb([i * 40, x as u8 * 9, y as u8 * 11]))).collect();
    write_frame_stack(&frames, dir.path().join("clip.png")).unwrap();
    write_tracks(&TrackSet::empty(3, 16, 12, 30.0).unwrap(), dir.path().join("clip.trks")).unwrap();
    let entry = ManifestEntry { id: "empty".into(), video_path: "clip.png".into(), track_path: "clip.trks".into(), label: 0 };
    let manifest = DatasetManifest { entries: vec![entry], class_names: vec!["a".into(), "b".into()], split: Split::Val };
    manifest.save(dir.path().join("m.manifest")).unwrap();
    let out = trec(dir.path(), &["visualize", "--manifest", s(&dir.path().join("m.manifest")), "--sample", "empty"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no tracks"));
    assert_eq!(image::open(dir.path().join("visualize/empty.png")).unwrap().to_rgb8(), frames[0]);
}

#[test]
fn train_snapshot_reruns_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let first = dir.path().join("first");
    ok(&trec(dir.path(), &["train", "--config", s(&cfg), "--epochs", "1", "--seed", "4", "--out", s(&first)]));
    for f in ["config.toml", "last.safetensors", "best.safetensors", "history.jsonl"] {
        assert!(first.join(f).exists(), "{f}");
    }
    let snapshot = fs::read_to_string(first.join("config.toml")).unwrap();
    assert!(snapshot.contains("epochs = 1") && snapshot.contains("seed = 4"), "{snapshot}");
    let second = dir.path().join("second");
    ok(&trec(dir.path(), &["train", "--config", s(&first.join("config.toml")), "--out", s(&second)]));
    assert_eq!(fs::read(first.join("history.jsonl")).unwrap(), fs::read(second.join("history.jsonl")).unwrap());
    assert_eq!(fs::read(first.join("last.safetensors")).unwrap(), fs::read(second.join("last.safetensors")).unwrap());
}

#[test]
fn experiments_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    ok(&trec(dir.path(), &["experiment", "track_vs_notrack", "--config", s(&cfg), "--epochs", "1"]));
    let out = dir.path().join("experiment/track_vs_notrack");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert!(out.join("config.toml").exists() && out.join("records.jsonl").exists());

    let ckpt = out.join("trec/seed-0/best.safetensors");
    let res = trec(dir.path(), &["experiment", "point_ablation", "--config", s(&cfg), "--checkpoint", s(&ckpt)]);
    ok(&res);
    let abl = dir.path().join("experiment/point_ablation");
    assert!(abl.join("accuracy_vs_points.svg").exists());
    let table = String::from_utf8_lossy(&res.stdout);
    assert!(table.contains("16") && table.contains('0'), "{table}");

    let baseline = out.join("baseline/seed-0/best.safetensors");
    let res = trec(dir.path(), &["experiment", "point_ablation", "--config", s(&cfg), "--checkpoint", s(&baseline)]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let root = tempfile::tempdir().unwrap();
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        // synth with one clip per class checks the whole file against the schema
        let out = root.path().join(path.file_stem().unwrap());
        let args = ["synth", "--config", s(&path), "--samples-per-class", "1", "--val-samples-per-class", "1", "--points", "8", "--splits", "val"];
        ok(&trec(root.path(), &[&args[..], &["--out", s(&out)]].concat()));
        assert!(fs::read_to_string(out.join("config.toml")).unwrap().contains("seed"));
        seen += 1;
    }
    assert!(seen >= 2);
}
