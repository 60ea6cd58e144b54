use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Tensor, D};
use rand_chacha::ChaCha8Rng;

use crate::config::{EncoderConfig, ModelConfig};
use crate::layers::{conv3x3, dropout, key_padding_bias, patchify, Attention, LayerNorm, Linear, Mlp, MultiHeadAttention};
use crate::params::ParamStore;
use crate::ModelError;

type Result<T> = std::result::Result<T, ModelError>;

struct Stage {
    merge: Option<Linear>,
    conv_w: Tensor,
    conv_b: Tensor,
}

/// Per-frame convolutional encoder: patch stem, then residual stages that
/// halve the resolution, then global average pooling.
pub struct FrameEncoder {
    patch: usize,
    stem: Linear,
    stages: Vec<Stage>,
}

impl FrameEncoder {
    fn new(ps: &mut ParamStore, cfg: &EncoderConfig) -> Result<Self> {
        let p = cfg.patch;
        let stem = Linear::with_std(ps, "encoder.stem", p * p * 3, cfg.channels[0], (2.0 / (p * p * 3) as f64).sqrt())?;
        let mut stages = Vec::with_capacity(cfg.channels.len());
        let mut prev = cfg.channels[0];
        for (i, &c) in cfg.channels.iter().enumerate() {
            let merge = if i == 0 {
                None
            } else {
                Some(Linear::with_std(ps, &format!("encoder.stage{i}.merge"), 4 * prev, c, (1.0 / (4 * prev) as f64).sqrt())?)
            };
            let conv_w = ps.normal(&format!("encoder.stage{i}.conv.weight"), &[9 * c, c], 0.5 * (2.0 / (9 * c) as f64).sqrt())?;
            let conv_b = ps.constant(&format!("encoder.stage{i}.conv.bias"), &[c], 0.0)?;
            stages.push(Stage { merge, conv_w, conv_b });
            prev = c;
        }
        Ok(Self { patch: p, stem, stages })
    }

    /// `(N, H, W, 3)` images to `(N, C)` pooled features.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.stem.forward(&patchify(x, self.patch)?)?.silu()?;
        for stage in &self.stages {
            if let Some(merge) = &stage.merge {
                h = merge.forward(&patchify(&h, 2)?)?;
            }
            h = (&h + conv3x3(&h, &stage.conv_w, &stage.conv_b)?.silu()?)?;
        }
        Ok(h.mean(2)?.mean(1)?)
    }
}

struct Block {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: Mlp,
}

/// Kind of a token in the fused sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Class,
    Frame,
    Point,
}

/// Fused token sequence `[class; frames; points]`.
pub struct TokenSequence {
    /// `(B, N, d_model)`.
    pub tokens: Tensor,
    pub kinds: Vec<TokenKind>,
    /// Key bias masking padded point tokens, if any.
    pub bias: Option<Tensor>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }
}

/// One batch of preprocessed inputs.
#[derive(Clone, Debug)]
pub struct ModelInput {
    /// `(B, F, H, W, 3)` normalized frames. Single-image modes read frame 0.
    pub frames: Tensor,
    /// `(B, P, 2T)` normalized, reshaped tracks.
    pub tracks: Option<Tensor>,
    /// Row-major `(B, P)` flags; `false` marks a padding row.
    pub keep: Option<Vec<bool>>,
}

/// The action recognizer: image encoder, track projection, transformer
/// fusion, attention pooling and classification head.
pub struct TrecModel {
    config: ModelConfig,
    params: ParamStore,
    encoder: FrameEncoder,
    frame_proj: Linear,
    frame_pos: Tensor,
    frame_kind: Tensor,
    point_kind: Tensor,
    class_token: Tensor,
    track_mlp: Mlp,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
    pool: MultiHeadAttention,
    head: Mlp,
}

impl TrecModel {
    /// Fresh model with weights drawn from `seed`. If the encoder config
    /// names a pretrained file, the backbone is loaded from it.
    pub fn new(config: ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        let model = Self::build(config, seed, dtype)?;
        if let Some(path) = &model.config.encoder.pretrained {
            let tensors = candle_core::safetensors::load(path, model.params.device())
                .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
            model.params.assign_from(&tensors, "encoder.")?;
        }
        Ok(model)
    }

    fn build(config: ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new(seed, dtype);
        let d = config.d_model;
        let encoder = FrameEncoder::new(&mut ps, &config.encoder)?;
        let frame_proj = Linear::new(&mut ps, "frame_proj", config.encoder.output_dim(), d)?;
        let frame_pos = ps.normal("frame_pos", &[config.num_frames, d], 0.02)?;
        let frame_kind = ps.normal("kind.frame", &[d], 0.02)?;
        let point_kind = ps.normal("kind.point", &[d], 0.02)?;
        let class_token = ps.normal("class_token", &[d], 0.02)?;
        let track_mlp = Mlp::new(&mut ps, "track_mlp", config.track_dim(), config.track_hidden, d)?;
        let mut blocks = Vec::with_capacity(config.num_layers);
        for i in 0..config.num_layers {
            let name = format!("blocks.{i}");
            blocks.push(Block {
                ln1: LayerNorm::new(&mut ps, &format!("{name}.ln1"), d)?,
                attn: MultiHeadAttention::new(&mut ps, &format!("{name}.attn"), d, config.num_heads)?,
                ln2: LayerNorm::new(&mut ps, &format!("{name}.ln2"), d)?,
                ffn: Mlp::new(&mut ps, &format!("{name}.ffn"), d, config.ffn_dim, d)?,
            });
        }
        let final_norm = LayerNorm::new(&mut ps, "final_norm", d)?;
        let pool = MultiHeadAttention::new(&mut ps, "pool", d, config.num_heads)?;
        let head = Mlp::new(&mut ps, "head", d, d, config.num_classes)?;
        Ok(Self {
            config,
            params: ps,
            encoder,
            frame_proj,
            frame_pos,
            frame_kind,
            point_kind,
            class_token,
            track_mlp,
            blocks,
            final_norm,
            pool,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// `(B, F, H, W, 3)` frames to `(B, F, d_model)` tokens with temporal
    /// position and kind embeddings added.
    pub fn encode_frames(&self, frames: &Tensor) -> Result<Tensor> {
        let (b, f, h, w, c) = frames.dims5()?;
        let [ew, eh] = self.config.encoder.image_size;
        if (w, h, c) != (ew, eh, 3) {
            return Err(ModelError::Shape(format!("frames are {w}x{h}x{c}, encoder expects {ew}x{eh}x3")));
        }
        if f > self.config.num_frames {
            return Err(ModelError::Shape(format!("{f} frames exceed the horizon {}", self.config.num_frames)));
        }
        let feats = self.encoder.forward(&frames.reshape((b * f, h, w, c))?)?;
        let tokens = self.frame_proj.forward(&feats)?.reshape((b, f, self.config.d_model))?;
        let pos = self.frame_pos.narrow(0, 0, f)?.broadcast_add(&self.frame_kind)?;
        Ok(tokens.broadcast_add(&pos)?)
    }

    /// `(B, P, 2T)` tracks to `(B, P, d_model)` tokens. Points carry no
    /// positional code, only the point kind embedding.
    pub fn project_tracks(&self, tracks: &Tensor) -> Result<Tensor> {
        let (_, _, width) = tracks.dims3()?;
        if width != self.config.track_dim() {
            return Err(ModelError::Shape(format!("track width {width}, expected {}", self.config.track_dim())));
        }
        Ok(crate::fused::bias_add(&self.track_mlp.forward(tracks)?, &self.point_kind)?)
    }

    /// Builds `[class; frames; points]` and runs the transformer layers.
    pub fn fuse(
        &self,
        frame_tokens: &Tensor,
        point_tokens: Option<&Tensor>,
        keep: Option<&[bool]>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TokenSequence> {
        let (b, f, d) = frame_tokens.dims3()?;
        if f == 0 {
            return Err(ModelError::Shape("at least one frame token is required".into()));
        }
        let p = point_tokens.map(|t| t.dim(1)).transpose()?.unwrap_or(0);
        let n = 1 + f + p;
        if n > self.config.max_tokens {
            return Err(ModelError::Capacity { tokens: n, max: self.config.max_tokens });
        }
        let cls = self.class_token.reshape((1, 1, d))?.broadcast_as((b, 1, d))?.contiguous()?;
        let mut parts = vec![cls, frame_tokens.clone()];
        parts.extend(point_tokens.filter(|_| p > 0).cloned());
        let mut x = Tensor::cat(&parts, 1)?;
        let mut kinds = vec![TokenKind::Class];
        kinds.extend(std::iter::repeat_n(TokenKind::Frame, f));
        kinds.extend(std::iter::repeat_n(TokenKind::Point, p));
        let bias = match keep {
            Some(keep) if keep.iter().any(|k| !k) => {
                if keep.len() != b * p {
                    return Err(ModelError::Shape(format!("keep mask has {} entries, expected {}", keep.len(), b * p)));
                }
                let mut full = Vec::with_capacity(b * n);
                for row in keep.chunks(p) {
                    full.extend(std::iter::repeat_n(true, 1 + f));
                    full.extend_from_slice(row);
                }
                Some(key_padding_bias(&full, b, self.dtype())?)
            }
            _ => None,
        };
        let rate = self.config.dropout;
        for block in &self.blocks {
            let h = block.ln1.forward(&x)?;
            let att = block.attn.forward(&h, &h, bias.as_ref())?;
            x = (x + dropout(&att.output, rate, rng.as_deref_mut())?)?;
            let h = block.ffn.forward(&block.ln2.forward(&x)?)?;
            x = (x + dropout(&h, rate, rng.as_deref_mut())?)?;
        }
        Ok(TokenSequence { tokens: self.final_norm.forward(&x)?, kinds, bias })
    }

    /// Single-query attention from the fused class token over all tokens.
    pub fn pool(&self, g: &TokenSequence) -> Result<Attention> {
        if g.kinds.first() != Some(&TokenKind::Class) {
            return Err(ModelError::Shape("token sequence has no class token".into()));
        }
        let query = g.tokens.narrow(1, 0, 1)?;
        let att = self.pool.forward(&query, &g.tokens, g.bias.as_ref())?;
        Ok(Attention { output: att.output.squeeze(1)?, weights: att.weights })
    }

    pub fn classify(&self, pooled: &Tensor) -> Result<Tensor> {
        self.head.forward(pooled)
    }

    /// Logits `(B, num_classes)`. Passing `rng` enables dropout.
    pub fn forward(&self, input: &ModelInput, mut rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let mode = self.config.mode;
        let frames = if mode.single_image() {
            input.frames.narrow(1, 0, 1)?
        } else {
            if input.frames.dim(1)? != self.config.num_frames {
                return Err(ModelError::Mode(format!(
                    "{mode} expects {} frames, got {}",
                    self.config.num_frames,
                    input.frames.dim(1)?
                )));
            }
            input.frames.clone()
        };
        let frame_tokens = self.encode_frames(&frames)?;
        let (points, keep) = if mode.uses_tracks() {
            let tracks = input.tracks.as_ref().ok_or_else(|| ModelError::Mode(format!("{mode} requires point tracks")))?;
            let points = if tracks.dim(1)? > 0 { Some(self.project_tracks(tracks)?) } else { None };
            (points, input.keep.as_deref())
        } else {
            (None, None)
        };
        let g = self.fuse(&frame_tokens, points.as_ref(), keep, rng.as_deref_mut())?;
        self.classify(&self.pool(&g)?.output)
    }

    /// Cross-entropy averaged over the batch.
    pub fn loss(&self, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
        cross_entropy(logits, labels)
    }

    /// Writes weights to `path` and the configuration beside it as JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)?;
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            dtype: format!("{:?}", self.dtype()).to_lowercase(),
        };
        let text = serde_json::to_string_pretty(&meta)?;
        std::fs::write(meta_path(path), text).map_err(|e| ModelError::Io { path: meta_path(path), source: e })
    }

    /// Loads a checkpoint written by [`TrecModel::save`]. When `expected` is
    /// given, a differing stored configuration is refused.
    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        let meta = read_meta(path)?;
        if let Some(expected) = expected {
            if *expected != meta.config {
                return Err(ModelError::ConfigMismatch {
                    stored: Box::new(meta.config),
                    expected: Box::new(expected.clone()),
                });
            }
        }
        let dtype = match meta.dtype.as_str() {
            "f32" => DType::F32,
            "f64" => DType::F64,
            other => return Err(ModelError::Checkpoint(format!("unsupported dtype `{other}`"))),
        };
        let model = Self::build(meta.config, 0, dtype)?;
        let tensors: HashMap<String, Tensor> = candle_core::safetensors::load(path, model.params.device())
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        if tensors.len() != model.params.vars().len() {
            return Err(ModelError::Checkpoint(format!(
                "{} tensors stored, model has {}",
                tensors.len(),
                model.params.vars().len()
            )));
        }
        model.params.assign_from(&tensors, "")?;
        Ok(model)
    }
}

pub const CHECKPOINT_FORMAT: &str = "trec-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct CheckpointMeta {
    format: String,
    version: u32,
    config: ModelConfig,
    dtype: String,
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let mp = meta_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| ModelError::Io { path: mp.clone(), source: e })?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.format != CHECKPOINT_FORMAT || meta.version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "{} is `{}` v{}, expected `{CHECKPOINT_FORMAT}` v{CHECKPOINT_VERSION}",
            mp.display(),
            meta.format,
            meta.version
        )));
    }
    Ok(meta)
}

/// Reads only the configuration stored with a checkpoint.
pub fn checkpoint_config(path: &Path) -> Result<ModelConfig> {
    Ok(read_meta(path)?.config)
}

pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, c) = logits.dims2()?;
    if labels.len() != b || labels.iter().any(|&l| l >= c) {
        return Err(ModelError::Shape(format!("{} labels for {b} rows of {c} classes", labels.len())));
    }
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    let log_probs = shifted.broadcast_sub(&lse)?;
    let idx = Tensor::from_vec(labels.iter().map(|&l| l as u32).collect::<Vec<_>>(), (b, 1), logits.device())?;
    Ok((log_probs.gather(&idx, 1)?.sum_all()? * (-1.0 / b as f64))?)
}
