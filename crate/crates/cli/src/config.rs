use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trec_core::augment::AugmentPolicy;
use trec_core::data::SyntheticDataset;
use trec_evalbench::KdeExperiment;
use trec_model::{Mode, ModelConfig};
use trec_train::TrainConfig;

use crate::error::CliError;

/// Environment variable that replaces `output_root` from the config file.
pub const OUTPUT_ROOT_ENV: &str = "TREC_OUTPUT_ROOT";

/// Name of the resolved configuration written into every output directory.
pub const SNAPSHOT: &str = "config.toml";

/// Everything a command needs, read from one TOML file. Missing sections fall
/// back to the desk-scale defaults; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_root: PathBuf,
    /// Training seeds of the experiments; `train` uses `train.seed`.
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub kde: KdeExperiment,
    pub ablation: AblationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Generated in memory when no manifests are given, and by `synth`.
    pub synthetic: SyntheticDataset,
    /// Clips per class of the validation and test splits; defaults to the
    /// training count.
    pub val_samples_per_class: Option<usize>,
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticDataset { samples_per_class: 250, ..SyntheticDataset::default() },
            val_samples_per_class: Some(62),
            train_manifest: None,
            val_manifest: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub counts: Vec<usize>,
    /// Point-selection seeds, one evaluation pass per seed and count.
    pub seeds: Vec<u64>,
    /// Trained model to evaluate; one is trained first when unset.
    pub checkpoint: Option<PathBuf>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { counts: vec![400, 200, 100, 50, 25, 15, 5, 0], seeds: vec![1], checkpoint: None }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let epochs = 5;
        Self {
            output_root: PathBuf::from("runs"),
            seeds: vec![0],
            data: DataConfig::default(),
            model: ModelConfig::tiny(8, Mode::Trec),
            train: TrainConfig {
                lr_transformer: 1e-3,
                lr_backbone: 1e-4,
                epochs,
                restart_epochs: epochs,
                points: [16, 96],
                validate_every: epochs,
                augment: AugmentPolicy { flip_probability: 0.0, output_size: [64, 64], ..AugmentPolicy::default() },
                ..TrainConfig::default()
            },
            kde: KdeExperiment::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads `path`, or the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
    }

    /// Keys present in `text` replace the desk defaults one by one, so a
    /// partial `[model]` table still starts from the desk-scale model.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let user: toml::Table = toml::from_str(text).map_err(|e| CliError::Usage(e.to_string()))?;
        let mut merged = toml::Table::try_from(Self::default()).map_err(|e| CliError::Usage(e.to_string()))?;
        merge(&mut merged, user);
        toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| CliError::Usage(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Usage(format!("config cannot be serialized: {e}")))
    }

    /// Output root, with the environment override applied.
    pub fn root(&self) -> PathBuf {
        std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| self.output_root.clone())
    }

    /// `explicit` when given, else `<root>/<name>`.
    pub fn out_dir(&self, explicit: Option<&Path>, name: &str) -> PathBuf {
        explicit.map(Path::to_path_buf).unwrap_or_else(|| self.root().join(name))
    }

    /// Creates `dir` and writes the resolved config into it.
    pub fn snapshot(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(SNAPSHOT);
        fs::write(&path, self.to_toml()?).map_err(|e| CliError::io(&path, e))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
