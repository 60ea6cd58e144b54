use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ModelError;

/// Which inputs the network consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// All frames plus point tracks.
    Trec,
    /// All frames, tracks ignored.
    Baseline,
    /// First frame plus tracks spanning every frame.
    SingleImageTrec,
    /// First frame only.
    SingleImageBaseline,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Trec, Mode::Baseline, Mode::SingleImageTrec, Mode::SingleImageBaseline];

    pub fn uses_tracks(self) -> bool {
        matches!(self, Mode::Trec | Mode::SingleImageTrec)
    }

    pub fn single_image(self) -> bool {
        matches!(self, Mode::SingleImageTrec | Mode::SingleImageBaseline)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Trec => "trec",
            Mode::Baseline => "baseline",
            Mode::SingleImageTrec => "single_image_trec",
            Mode::SingleImageBaseline => "single_image_baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown mode `{s}`")))
    }
}

/// Small residual CNN applied to every frame independently.
///
/// A `patch`x`patch` stem is followed by one stage per entry of `channels`;
/// every stage after the first halves the resolution with a 2x2 patch merge,
/// then applies a residual 3x3 convolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub patch: usize,
    pub channels: Vec<usize>,
    /// Input frame size as `[width, height]`.
    pub image_size: [usize; 2],
    /// Safetensors file holding `encoder.*` weights to start from.
    pub pretrained: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { patch: 4, channels: vec![16, 32, 64, 128], image_size: [256, 256], pretrained: None }
    }
}

impl EncoderConfig {
    pub fn output_dim(&self) -> usize {
        *self.channels.last().unwrap_or(&0)
    }

    /// Total downsampling factor between the input and the last stage.
    pub fn stride(&self) -> usize {
        self.patch << self.channels.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.patch == 0 || self.channels.is_empty() || self.channels.contains(&0) {
            return Err(ModelError::Config("encoder needs a positive patch size and channel widths".into()));
        }
        let s = self.stride();
        let [w, h] = self.image_size;
        if w == 0 || h == 0 || w % s != 0 || h % s != 0 {
            return Err(ModelError::Config(format!("image size {w}x{h} must be a positive multiple of the encoder stride {s}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    /// Hidden width of the track projection MLP.
    pub track_hidden: usize,
    pub encoder: EncoderConfig,
    pub num_classes: usize,
    /// Observation horizon T.
    pub num_frames: usize,
    pub mode: Mode,
    pub max_tokens: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 512,
            num_layers: 6,
            num_heads: 4,
            ffn_dim: 2048,
            track_hidden: 512,
            encoder: EncoderConfig::default(),
            num_classes: 174,
            num_frames: 8,
            mode: Mode::Trec,
            max_tokens: 1024,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    /// The desk-scale configuration used on 64x64 synthetic clips.
    pub fn tiny(num_classes: usize, mode: Mode) -> Self {
        Self {
            d_model: 128,
            num_layers: 4,
            num_heads: 4,
            ffn_dim: 256,
            track_hidden: 128,
            encoder: EncoderConfig { patch: 8, image_size: [64, 64], ..EncoderConfig::default() },
            num_classes,
            mode,
            max_tokens: 512,
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} must be a positive multiple of num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.num_layers == 0 {
            return Err(ModelError::Config("num_layers must be at least 1".into()));
        }
        if self.num_classes == 0 {
            return Err(ModelError::Config("num_classes must be at least 1".into()));
        }
        if self.num_frames == 0 || self.ffn_dim == 0 || self.track_hidden == 0 {
            return Err(ModelError::Config("num_frames, ffn_dim and track_hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.max_tokens < 1 + self.frame_tokens() {
            return Err(ModelError::Config("max_tokens cannot hold the class and frame tokens".into()));
        }
        self.encoder.validate()
    }

    /// Frame tokens per clip under the configured mode.
    pub fn frame_tokens(&self) -> usize {
        if self.mode.single_image() {
            1
        } else {
            self.num_frames
        }
    }

    /// Width of one track token before projection.
    pub fn track_dim(&self) -> usize {
        2 * self.num_frames
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self { mode, ..self.clone() }
    }
}
