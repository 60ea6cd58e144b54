use std::path::Path;
use std::process::ExitCode;

use trec_core::data::DataError;
use trec_core::kde::KdeError;
use trec_core::TrackError;
use trec_evalbench::EvalError;
use trec_model::ModelError;
use trec_train::TrainError;

/// Failure categories, one exit code each.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or arguments.
    Usage(String),
    /// Unreadable, malformed or inconsistent data.
    Data(String),
    /// Training diverged.
    Numeric(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage error",
            CliError::Data(_) => "data error",
            CliError::Numeric(_) => "numeric failure",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Argument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrackError> for CliError {
    fn from(e: TrackError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<KdeError> for CliError {
    fn from(e: KdeError) -> Self {
        match e {
            KdeError::Bandwidth(_) | KdeError::Quantile(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::ConfigMismatch { .. } | ModelError::Mode(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Kde(k) => k.into(),
            TrainError::Data(d) => d.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            EvalError::Argument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
