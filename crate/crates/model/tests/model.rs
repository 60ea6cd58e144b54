use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trec_model::layers::{softmax_last, MultiHeadAttention};
use trec_model::{EncoderConfig, Mode, ModelConfig, ModelError, ModelInput, ParamStore, TokenKind, TrecModel};

fn small_config(mode: Mode, frames: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 32,
        track_hidden: 16,
        encoder: EncoderConfig { patch: 4, channels: vec![4, 4, 8, 8], image_size: [32, 32], pretrained: None },
        num_classes: 3,
        num_frames: frames,
        mode,
        max_tokens: 64,
        dropout: 0.0,
    }
}

fn random_input(b: usize, frames: usize, p: usize, seed: u64, dtype: DType) -> ModelInput {
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |n: usize, scale: f64| -> Vec<f64> { (0..n).map(|_| scale * (2.0 * rand::Rng::random::<f64>(&mut rng) - 1.0)).collect() };
    let frames_t = Tensor::from_vec(uniform(b * frames * 32 * 32 * 3, 2.0), (b, frames, 32, 32, 3), &dev).unwrap();
    let tracks = Tensor::from_vec(uniform(b * p * 2 * frames, 1.0), (b, p, 2 * frames), &dev).unwrap();
    ModelInput { frames: frames_t.to_dtype(dtype).unwrap(), tracks: Some(tracks.to_dtype(dtype).unwrap()), keep: None }
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

#[test]
fn analytic_gradients_match_central_differences() {
    let model = TrecModel::new(small_config(Mode::Trec, 2), 11, DType::F64).unwrap();
    let input = random_input(2, 2, 3, 5, DType::F64);
    let labels = [0usize, 2];
    let loss_at = || scalar(&model.loss(&model.forward(&input, None).unwrap(), &labels).unwrap());
    let loss = model.loss(&model.forward(&input, None).unwrap(), &labels).unwrap();
    let grads = loss.backward().unwrap();
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = (0.0f64, String::new());
    for (name, var) in model.params().vars() {
        let g = grads.get(var.as_tensor()).unwrap_or_else(|| panic!("no gradient for {name}"));
        let dir: Vec<f64> = (0..var.elem_count()).map(|_| rand::Rng::random::<f64>(&mut rng) * 2.0 - 1.0).collect();
        let dir = Tensor::from_vec(dir, var.dims(), &Device::Cpu).unwrap();
        let analytic = scalar(&(g * &dir).unwrap().sum_all().unwrap());
        let base = var.as_tensor().copy().unwrap();
        var.set(&(&base + (&dir * eps).unwrap()).unwrap()).unwrap();
        let plus = loss_at();
        var.set(&(&base - (&dir * eps).unwrap()).unwrap()).unwrap();
        let minus = loss_at();
        var.set(&base).unwrap();
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        assert!(analytic.abs() > 1e-9, "{name}: vanishing gradient");
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    assert!(worst.0 < 1e-4, "worst relative error {:.3e} at {}", worst.0, worst.1);
}

#[test]
fn logits_ignore_point_order() {
    let model = TrecModel::new(small_config(Mode::Trec, 4), 2, DType::F32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..10 {
        let input = random_input(1, 4, 12, trial, DType::F32);
        let mut order: Vec<u32> = (0..12).collect();
        order.shuffle(&mut rng);
        let idx = Tensor::from_vec(order, 12, &Device::Cpu).unwrap();
        let permuted = ModelInput { tracks: Some(input.tracks.as_ref().unwrap().index_select(&idx, 1).unwrap()), ..input.clone() };
        let a = values(&model.forward(&input, None).unwrap());
        let b = values(&model.forward(&permuted, None).unwrap());
        let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-5 * scale, "{x} vs {y}");
        }
    }
}

#[test]
fn zero_points_reduce_trec_to_baseline_exactly() {
    let trec = TrecModel::new(small_config(Mode::Trec, 2), 4, DType::F32).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.safetensors");
    trec.save(&path).unwrap();
    let baseline_cfg = small_config(Mode::Baseline, 2);
    let baseline = TrecModel::new(baseline_cfg, 99, DType::F32).unwrap();
    let weights = candle_core::safetensors::load(&path, &Device::Cpu).unwrap();
    baseline.params().assign_from(&weights, "").unwrap();
    let input = random_input(3, 2, 0, 1, DType::F32);
    let a = values(&trec.forward(&input, None).unwrap());
    let b = values(&baseline.forward(&input, None).unwrap());
    assert_eq!(a, b);
}

#[test]
fn baseline_ignores_tracks() {
    let model = TrecModel::new(small_config(Mode::Baseline, 2), 4, DType::F32).unwrap();
    let input = random_input(2, 2, 5, 1, DType::F32);
    let without = ModelInput { tracks: None, ..input.clone() };
    assert_eq!(values(&model.forward(&input, None).unwrap()), values(&model.forward(&without, None).unwrap()));
}

#[test]
fn trec_without_tracks_is_a_mode_error() {
    let model = TrecModel::new(small_config(Mode::Trec, 2), 4, DType::F32).unwrap();
    let input = ModelInput { tracks: None, ..random_input(1, 2, 1, 1, DType::F32) };
    assert!(matches!(model.forward(&input, None), Err(ModelError::Mode(_))));
}

#[test]
fn too_many_tokens_is_a_capacity_error() {
    let model = TrecModel::new(small_config(Mode::Trec, 2), 4, DType::F32).unwrap();
    let input = random_input(1, 2, 70, 1, DType::F32);
    assert!(matches!(model.forward(&input, None), Err(ModelError::Capacity { tokens: 73, max: 64 })));
}

#[test]
fn token_layout_and_counts() {
    let model = TrecModel::new(small_config(Mode::Trec, 8), 4, DType::F32).unwrap();
    let input = random_input(2, 8, 5, 3, DType::F32);
    let frames = model.encode_frames(&input.frames).unwrap();
    assert_eq!(frames.dims(), &[2, 8, 16]);
    let points = model.project_tracks(input.tracks.as_ref().unwrap()).unwrap();
    assert_eq!(points.dims(), &[2, 5, 16]);
    let g = model.fuse(&frames, Some(&points), None, None).unwrap();
    assert_eq!(g.tokens.dims(), &[2, 14, 16]);
    assert_eq!(g.kinds[0], TokenKind::Class);
    assert_eq!(g.kinds.iter().filter(|k| **k == TokenKind::Frame).count(), 8);
    assert_eq!(g.kinds.iter().filter(|k| **k == TokenKind::Point).count(), 5);
    let pooled = model.pool(&g).unwrap();
    assert_eq!(pooled.output.dims(), &[2, 16]);
    for s in values(&pooled.weights.sum(3).unwrap()) {
        assert!((s - 1.0).abs() < 1e-5);
    }
    let logits = model.classify(&pooled.output).unwrap();
    assert_eq!(logits.dims(), &[2, 3]);
    for s in values(&softmax_last(&logits).unwrap().sum(1).unwrap()) {
        assert!((s - 1.0).abs() < 1e-5);
    }
}

#[test]
fn identical_frames_differ_only_by_position() {
    let model = TrecModel::new(small_config(Mode::Trec, 3), 4, DType::F64).unwrap();
    let one = random_input(1, 1, 0, 2, DType::F64).frames;
    let frames = Tensor::cat(&[&one, &one, &one], 1).unwrap();
    let tokens = model.encode_frames(&frames).unwrap().squeeze(0).unwrap();
    let pos = model.params().get("frame_pos").unwrap().as_tensor().clone();
    let stripped = values(&(tokens - pos).unwrap());
    let (a, rest) = stripped.split_at(16);
    for row in rest.chunks(16) {
        for (x, y) in a.iter().zip(row) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn single_image_modes_use_one_frame_token() {
    let model = TrecModel::new(small_config(Mode::SingleImageTrec, 4), 4, DType::F32).unwrap();
    let input = random_input(1, 4, 6, 3, DType::F32);
    let logits = model.forward(&input, None).unwrap();
    assert_eq!(logits.dims(), &[1, 3]);
    let frames = model.encode_frames(&input.frames.narrow(1, 0, 1).unwrap()).unwrap();
    let g = model.fuse(&frames, Some(&model.project_tracks(input.tracks.as_ref().unwrap()).unwrap()), None, None).unwrap();
    assert_eq!(g.len(), 1 + 1 + 6);
    // later frames are never read
    let mut altered = input.clone();
    let first = altered.frames.narrow(1, 0, 1).unwrap();
    altered.frames = Tensor::cat(&[first, Tensor::zeros((1, 3, 32, 32, 3), DType::F32, &Device::Cpu).unwrap()], 1).unwrap();
    assert_eq!(values(&logits), values(&model.forward(&altered, None).unwrap()));
}

#[test]
fn pooling_identical_tokens_returns_their_projection() {
    let mut ps = ParamStore::new(5, DType::F64);
    let mha = MultiHeadAttention::new(&mut ps, "pool", 8, 2).unwrap();
    let token = Tensor::randn(0f64, 1.0, (1, 1, 8), &Device::Cpu).unwrap();
    let tokens = token.repeat((1, 6, 1)).unwrap();
    let pooled = mha.forward(&token, &tokens, None).unwrap();
    let single = mha.forward(&token, &token, None).unwrap();
    for (a, b) in values(&pooled.output).iter().zip(values(&single.output)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_mixes_tokens() {
    let mut ps = ParamStore::new(5, DType::F64);
    let mha = MultiHeadAttention::new(&mut ps, "a", 8, 2).unwrap();
    let x = Tensor::randn(0f64, 1.0, (1, 4, 8), &Device::Cpu).unwrap();
    let mut eye = vec![0.0f64; 16];
    for i in 0..4 {
        eye[i * 4 + i] = -1e9;
    }
    let bias = Tensor::from_vec(eye, (1, 1, 4, 4), &Device::Cpu).unwrap();
    let a = values(&mha.forward(&x, &x, None).unwrap().output);
    let b = values(&mha.forward(&x, &x, Some(&bias)).unwrap().output);
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
}

#[test]
fn padded_points_are_ignored() {
    let model = TrecModel::new(small_config(Mode::Trec, 2), 4, DType::F64).unwrap();
    let input = random_input(1, 2, 4, 7, DType::F64);
    let junk = Tensor::full(5.0f64, (1, 3, 4), &Device::Cpu).unwrap();
    let padded = ModelInput {
        tracks: Some(Tensor::cat(&[input.tracks.as_ref().unwrap(), &junk], 1).unwrap()),
        keep: Some(vec![true, true, true, true, false, false, false]),
        ..input.clone()
    };
    for (a, b) in values(&model.forward(&input, None).unwrap()).iter().zip(values(&model.forward(&padded, None).unwrap())) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn untrained_loss_is_near_log_classes() {
    let cfg = ModelConfig { num_classes: 8, ..small_config(Mode::Trec, 2) };
    let model = TrecModel::new(cfg, 21, DType::F32).unwrap();
    let input = random_input(16, 2, 5, 3, DType::F32);
    let labels: Vec<usize> = (0..16).map(|i| i % 8).collect();
    let loss = scalar(&model.loss(&model.forward(&input, None).unwrap(), &labels).unwrap());
    let ln_c = 8f64.ln();
    assert!((loss - ln_c).abs() < 0.2 * ln_c, "{loss} vs {ln_c}");
}

#[test]
fn eval_forward_is_deterministic_and_dropout_is_seeded() {
    let cfg = ModelConfig { dropout: 0.3, ..small_config(Mode::Trec, 2) };
    let model = TrecModel::new(cfg.clone(), 8, DType::F32).unwrap();
    let again = TrecModel::new(cfg, 8, DType::F32).unwrap();
    let input = random_input(2, 2, 3, 3, DType::F32);
    let eval = values(&model.forward(&input, None).unwrap());
    assert_eq!(eval, values(&again.forward(&input, None).unwrap()));
    let drop_a = values(&model.forward(&input, Some(&mut ChaCha8Rng::seed_from_u64(1))).unwrap());
    let drop_b = values(&model.forward(&input, Some(&mut ChaCha8Rng::seed_from_u64(1))).unwrap());
    assert_eq!(drop_a, drop_b);
    assert_ne!(drop_a, eval);
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let cfg = small_config(Mode::Trec, 2);
    let model = TrecModel::new(cfg.clone(), 3, DType::F32).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    model.save(&path).unwrap();
    let loaded = TrecModel::load(&path, Some(&cfg)).unwrap();
    let input = random_input(2, 2, 3, 3, DType::F32);
    assert_eq!(values(&model.forward(&input, None).unwrap()), values(&loaded.forward(&input, None).unwrap()));
    let other = ModelConfig { num_layers: 3, ..cfg };
    assert!(matches!(TrecModel::load(&path, Some(&other)), Err(ModelError::ConfigMismatch { .. })));
    assert_eq!(trec_model::checkpoint_config(&path).unwrap().num_layers, 2);
}

#[test]
fn pretrained_backbone_is_loaded() {
    let cfg = small_config(Mode::Trec, 2);
    let donor = TrecModel::new(cfg.clone(), 1, DType::F32).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("donor.safetensors");
    donor.save(&path).unwrap();
    let mut with_backbone = cfg.clone();
    with_backbone.encoder.pretrained = Some(path);
    let model = TrecModel::new(with_backbone, 2, DType::F32).unwrap();
    let fresh = TrecModel::new(cfg, 2, DType::F32).unwrap();
    let stem = |m: &TrecModel| values(m.params().get("encoder.stem.weight").unwrap().as_tensor());
    assert_eq!(stem(&model), stem(&donor));
    assert_ne!(stem(&model), stem(&fresh));
    let head = |m: &TrecModel| values(m.params().get("head.fc1.weight").unwrap().as_tensor());
    assert_eq!(head(&model), head(&fresh));
}
