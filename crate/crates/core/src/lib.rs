//! Unsupervised induction of syntactic categories by deep embedded clustering.
//!
//! Contextual token or span embeddings are compressed by a stacked denoising
//! autoencoder and clustered jointly with a Student's-t soft assignment and a
//! sharpened target distribution. The crate is organised bottom-up:
//!
//! * [`dataio`] reads and writes embedding tensors, manifests and n-gram tables.
//! * [`net`] is a small dense network with exact backpropagation.
//! * [`sae`] pretrains and finetunes the autoencoder.
//! * [`dec`] holds KMeans and the joint clustering stage.
//! * [`feats`] composes morphological and span features.
//! * [`eval`] scores clusterings (many-to-one, one-to-one, F1).
//! * [`pipeline`] wires everything into runnable experiments.
//!
//! Row-wise work (assignment steps, soft assignments, encoding) runs on rayon
//! when the `parallel` feature is enabled and sequentially otherwise. Results
//! are bit-identical either way.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod dataio;
pub mod dec;
pub mod eval;
pub mod feats;
pub mod net;
pub mod parallel;
pub mod pipeline;
pub mod sae;

/// Dense row-major `f32` matrix used across the crate.
pub type Matrix = ndarray::Array2<f32>;

pub use dataio::{Dataset, DatasetManifest, EmbeddingTensor, MorphTable, Task};
pub use dec::{ClusterModel, HyperParams};
pub use net::{Activation, Network, RngState};
pub use sae::{AutoencoderSpec, EncoderStack, TrainConfig, TrainingPairs};
