//! End-to-end experiments: configuration, synthetic data, the training
//! pipeline, transfer, evaluation of saved predictions, and ablations.

mod ablate;
mod config;
mod run;
mod synth;

use std::path::Path;

use thiserror::Error;

use crate::dataio::DataError;
use crate::dec::DecError;
use crate::eval::EvalError;
use crate::feats::FeatError;
use crate::net::NetError;
use crate::sae::SaeError;

pub use ablate::{run_ablation, AblationAxis, AblationRow, AblationTable};
pub use config::{
    AblationConfig, ClusterConfig, DataConfig, MorphConfig, RunConfig, SpanConfig, CONFIG_VERSION,
};
pub use run::{
    prepare, read_predictions, run_eval, run_pipeline, run_pool, run_seed, run_transfer,
    score, write_predictions, Prepared, RunOptions, Scores, SeedOutcome, TransferReport,
};
pub use synth::{Generator, SynthSpec};

/// Error classes with stable process exit codes.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("data error: {0}")]
    Input(String),
    #[error("divergence: {0}")]
    Divergence(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) | PipelineError::Input(_) => 3,
            PipelineError::Divergence(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        PipelineError::Input(format!("{}: {e}", path.display()))
    }
}

impl From<NetError> for PipelineError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Divergence { .. } => PipelineError::Divergence(e.to_string()),
            other => PipelineError::Input(other.to_string()),
        }
    }
}

impl From<SaeError> for PipelineError {
    fn from(e: SaeError) -> Self {
        match e {
            SaeError::Divergence { .. } => PipelineError::Divergence(format!("autoencoder {e}")),
            SaeError::Net(n) => n.into(),
            other => PipelineError::Input(other.to_string()),
        }
    }
}

impl From<DecError> for PipelineError {
    fn from(e: DecError) -> Self {
        match e {
            DecError::Divergence { .. } => PipelineError::Divergence(e.to_string()),
            DecError::Net(n) => n.into(),
            DecError::Sae(s) => s.into(),
            other => PipelineError::Input(other.to_string()),
        }
    }
}

impl From<FeatError> for PipelineError {
    fn from(e: FeatError) -> Self {
        PipelineError::Input(e.to_string())
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::Input(e.to_string())
    }
}
