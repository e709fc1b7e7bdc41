//! Joint representation learning and clustering.
//!
//! The encoder is initialised from a pretrained [`EncoderStack`], centers
//! from KMeans on its codes. Training then minimises
//! the KL divergence from the soft assignment to its sharpened target, plus
//! `lambda` times the reconstruction error. The target is recomputed on the
//! full data every `target_update_interval` iterations and held fixed in
//! between.

mod assign;
mod fit;
mod kmeans;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::NetError;
use crate::sae::{encode, EncoderStack, SaeError};
use crate::Matrix;

pub use assign::{
    dec_losses, hard_labels, kl_divergence, kl_gradients, soft_assign, target_distribution,
    DecLosses, ASSIGNMENT_FLOOR,
};
pub use fit::{
    batch_objective, dec_fit, dec_grad_check, DecGradients, DecParams, RefreshRecord, Telemetry,
    TelemetrySink,
};
pub use kmeans::{kmeans_fit, KMeansResult, DEFAULT_RESTARTS, MAX_LLOYD_ITERATIONS};

#[derive(Debug, Error)]
pub enum DecError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cluster {cluster} has zero soft mass")]
    DegenerateCluster { cluster: usize },
    #[error("clustering diverged (non-finite loss) at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("transfer dimension mismatch: model expects {model_dim}-dim inputs, data has {data_dim}")]
    Transfer { model_dim: usize, data_dim: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sae(#[from] SaeError),
}

pub type Result<T, E = DecError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Number of clusters.
    pub m: usize,
    pub nu: f32,
    pub lambda: f32,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub target_update_interval: usize,
    pub kmeans_restarts: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            m: 2,
            nu: 1.0,
            lambda: 5.0,
            iterations: 4000,
            batch_size: 256,
            learning_rate: 0.001,
            momentum: 0.9,
            target_update_interval: 100,
            kmeans_restarts: DEFAULT_RESTARTS,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DecError::Argument(msg.into()));
        if self.m < 2 {
            return bad("m must be at least 2");
        }
        if !(self.nu > 0.0) {
            return bad("nu must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.batch_size == 0 || self.target_update_interval == 0 {
            return bad("batch_size and target_update_interval must be positive");
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning_rate must be >= 0 and momentum in [0, 1)");
        }
        Ok(())
    }

    /// Iterations equivalent to `epochs` passes over `n` items.
    pub fn iterations_for_epochs(&self, n: usize, epochs: usize) -> usize {
        n.div_ceil(self.batch_size) * epochs
    }
}

/// Trained encoder/decoder plus cluster centers in latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub stack: EncoderStack,
    pub centers: Matrix,
    pub nu: f32,
}

impl ClusterModel {
    pub fn new(stack: EncoderStack, centers: Matrix, nu: f32) -> Result<Self> {
        if centers.ncols() != stack.latent_dim() {
            return Err(DecError::Shape(format!(
                "centers have {} dims, latent space has {}",
                centers.ncols(),
                stack.latent_dim()
            )));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(DecError::Argument("non-finite cluster center".into()));
        }
        Ok(ClusterModel { stack, centers, nu })
    }

    pub fn m(&self) -> usize {
        self.centers.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.stack.input_dim()
    }
}

/// Hard labels (argmax of `q`, ties to the lowest cluster) and soft
/// assignments for `data`.
pub fn predict_hard(model: &ClusterModel, data: ArrayView2<'_, f32>) -> Result<(Vec<usize>, Matrix)> {
    let z = encode(&model.stack, data)?;
    let q = soft_assign(z.view(), model.centers.view(), model.nu)?;
    Ok((hard_labels(q.view()), q))
}

/// Applies a fitted model to data from another source without refitting.
pub fn transfer_apply(model: &ClusterModel, foreign: ArrayView2<'_, f32>) -> Result<(Vec<usize>, Matrix)> {
    if foreign.ncols() != model.input_dim() {
        return Err(DecError::Transfer {
            model_dim: model.input_dim(),
            data_dim: foreign.ncols(),
        });
    }
    predict_hard(model, foreign)
}
