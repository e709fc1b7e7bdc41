//! Stacked denoising autoencoder: greedy layer-wise pretraining, end-to-end
//! finetuning, encoding, and CBoW input/target pairing.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Dataset, Task};
use crate::net::{
    mse_grad, mse_loss, Activation, Dense, LinearLayer, NetError, Network, OptimizerState,
    RngState,
};
use crate::Matrix;

const PRETRAIN_STREAM: u64 = 1_000;
const FINETUNE_STREAM: u64 = 2_000;
const ENCODE_CHUNK: usize = 2048;

#[derive(Debug, Error)]
pub enum SaeError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unsupported task {0:?}: CBoW pairs need token-level data")]
    UnsupportedTask(Task),
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

pub type Result<T, E = SaeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderSpec {
    /// Encoder input width; `0` means "take it from the data".
    pub input_dim: usize,
    /// Encoder widths, last one is the latent size.
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub corrupt_rate: f32,
    pub tied: bool,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        AutoencoderSpec {
            input_dim: 0,
            hidden_dims: vec![75],
            activation: Activation::Identity,
            corrupt_rate: 0.2,
            tied: false,
        }
    }
}

impl AutoencoderSpec {
    pub fn with_input(input_dim: usize) -> Self {
        AutoencoderSpec {
            input_dim,
            ..Self::default()
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(SaeError::Argument("autoencoder dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.corrupt_rate) {
            return Err(SaeError::Argument(format!(
                "corrupt_rate {} outside [0, 1)",
                self.corrupt_rate
            )));
        }
        Ok(())
    }

    fn encoder_activation(&self, k: usize) -> Activation {
        if k + 1 < self.hidden_dims.len() {
            self.activation
        } else {
            Activation::Identity
        }
    }

    /// The decoder layer reconstructing level `k` stays linear when it
    /// reconstructs the raw data.
    fn decoder_activation(&self, k: usize) -> Activation {
        if k == 0 {
            Activation::Identity
        } else {
            self.activation
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(SaeError::Argument(
                "batch_size and learning_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SaeError::Argument("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    #[default]
    Plain,
    Cbow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContextSpec {
    pub mode: ContextMode,
    pub width: usize,
}

impl Default for ContextSpec {
    fn default() -> Self {
        ContextSpec {
            mode: ContextMode::Plain,
            width: 1,
        }
    }
}

/// What the autoencoder reads and what it must reconstruct. In plain mode
/// both are the data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPairs {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl TrainingPairs {
    pub fn plain(data: Matrix) -> Self {
        TrainingPairs {
            targets: data.clone(),
            inputs: data,
        }
    }

    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(SaeError::Argument(format!(
                "{} inputs but {} targets",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        Ok(TrainingPairs { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

/// Concatenates the `width` left then `width` right neighbours of each token
/// (zero vectors past sentence boundaries); the target is the token itself.
pub fn build_cbow_pairs(dataset: &Dataset, width: usize) -> Result<TrainingPairs> {
    let items = match dataset.manifest.posi_items() {
        Some(items) => items,
        None => return Err(SaeError::UnsupportedTask(dataset.task())),
    };
    if width == 0 {
        return Err(SaeError::Argument("context width must be at least 1".into()));
    }
    let d = dataset.dim();
    let index: HashMap<(usize, usize), usize> = items
        .iter()
        .enumerate()
        .map(|(row, it)| ((it.sent, it.tok), row))
        .collect();
    let mut inputs = Array2::<f32>::zeros((items.len(), 2 * width * d));
    for (row, it) in items.iter().enumerate() {
        let left = (1..=width).rev().map(|o| it.tok.checked_sub(o));
        let right = (1..=width).map(|o| Some(it.tok + o));
        for (slot, tok) in left.chain(right).enumerate() {
            if let Some(&src) = tok.and_then(|t| index.get(&(it.sent, t))) {
                inputs
                    .slice_mut(s![row, slot * d..(slot + 1) * d])
                    .assign(&dataset.matrix.row(src));
            }
        }
    }
    TrainingPairs::new(inputs, dataset.matrix.clone())
}

/// Encoder with its mirrored decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub encoder: Network,
    pub decoder: Network,
    pub tied: bool,
}

impl EncoderStack {
    pub fn new(encoder: Network, decoder: Network, tied: bool) -> Result<Self> {
        if encoder.is_empty() || encoder.layers().len() != decoder.layers().len() {
            return Err(SaeError::Argument(
                "encoder and decoder need the same, non-zero, number of layers".into(),
            ));
        }
        if encoder.out_dim() != decoder.in_dim() {
            return Err(SaeError::Argument(format!(
                "encoder emits {} dims, decoder expects {}",
                encoder.out_dim(),
                decoder.in_dim()
            )));
        }
        let stack = EncoderStack {
            encoder,
            decoder,
            tied,
        };
        if tied && !stack.weights_are_tied() {
            return Err(SaeError::Argument("tied stack whose decoder is not the encoder transpose".into()));
        }
        Ok(stack)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.decoder.out_dim()
    }

    pub(crate) fn weights_are_tied(&self) -> bool {
        let k = self.encoder.layers().len();
        (0..k).all(|i| {
            let e = &self.encoder.layers()[i].linear.weights;
            let d = &self.decoder.layers()[k - 1 - i].linear.weights;
            e.t() == d
        })
    }

    /// Full reconstruction with no corruption.
    pub fn reconstruct(&self, data: ArrayView2<'_, f32>) -> Result<Matrix> {
        let z = encode(self, data)?;
        Ok(self.decoder.infer(z.view())?)
    }
}

/// Per-epoch mean training loss; `initial` is the uncorrupted full-data loss
/// before the first update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace {
    pub initial: f32,
    pub epochs: Vec<f32>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        writeln!(out, "0,{}", self.initial).unwrap();
        for (e, l) in self.epochs.iter().enumerate() {
            writeln!(out, "{},{l}", e + 1).unwrap();
        }
        out
    }

    pub fn last(&self) -> f32 {
        self.epochs.last().copied().unwrap_or(self.initial)
    }
}

/// Deterministic encoder pass, chunked over rows.
pub fn encode(stack: &EncoderStack, data: ArrayView2<'_, f32>) -> Result<Matrix> {
    infer_chunked(&stack.encoder, data)
}

pub(crate) fn infer_chunked(net: &Network, data: ArrayView2<'_, f32>) -> Result<Matrix> {
    if data.ncols() != net.in_dim() {
        return Err(NetError::Shape(format!(
            "data width {} but network expects {}",
            data.ncols(),
            net.in_dim()
        ))
        .into());
    }
    let n = data.nrows();
    if n == 0 {
        return Ok(Array2::zeros((0, net.out_dim())));
    }
    let chunks = n.div_ceil(ENCODE_CHUNK);
    let parts = crate::parallel::map_range(chunks, |c| {
        let lo = c * ENCODE_CHUNK;
        let hi = (lo + ENCODE_CHUNK).min(n);
        net.infer(data.slice(s![lo..hi, ..]))
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>, _>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("chunks share width"))
}

fn random_layer(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut RngState) -> Dense {
    Dense {
        linear: LinearLayer::random(in_dim, out_dim, rng),
        activation,
    }
}

fn tied_transpose(layer: &Dense, activation: Activation, out_dim: usize) -> Dense {
    Dense {
        linear: LinearLayer {
            weights: layer.linear.weights.t().as_standard_layout().into_owned(),
            bias: ndarray::Array1::zeros(out_dim),
        },
        activation,
    }
}

/// Trains one denoising autoencoder `in → hidden → target width` and
/// returns it as a one-layer stack. Layer `level` of a deeper stack uses the
/// matching activations.
fn train_level(
    spec: &AutoencoderSpec,
    level: usize,
    inputs: ArrayView2<'_, f32>,
    targets: ArrayView2<'_, f32>,
    cfg: &TrainConfig,
) -> Result<(EncoderStack, LossTrace)> {
    let mut rng = RngState::with_stream(cfg.seed, PRETRAIN_STREAM + level as u64);
    let hidden = spec.hidden_dims[level];
    let enc = random_layer(inputs.ncols(), hidden, spec.encoder_activation(level), &mut rng);
    let dec = if spec.tied {
        if targets.ncols() != inputs.ncols() {
            return Err(SaeError::Argument(
                "tied weights need equal input and target widths".into(),
            ));
        }
        tied_transpose(&enc, spec.decoder_activation(level), targets.ncols())
    } else {
        random_layer(hidden, targets.ncols(), spec.decoder_activation(level), &mut rng)
    };
    let mut stack = EncoderStack::new(Network::new(vec![enc])?, Network::new(vec![dec])?, spec.tied)?;
    let trace = train_reconstruction(&mut stack, inputs, targets, spec.corrupt_rate, cfg, &mut rng)?;
    Ok((stack, trace))
}

/// A single denoising autoencoder with one hidden layer.
pub fn train_single_autoencoder(
    spec: &AutoencoderSpec,
    pairs: &TrainingPairs,
    cfg: &TrainConfig,
) -> Result<(EncoderStack, LossTrace)> {
    spec.validate()?;
    cfg.validate()?;
    if spec.hidden_dims.len() != 1 {
        return Err(SaeError::Argument("single autoencoder takes exactly one hidden width".into()));
    }
    check_pairs(spec, pairs)?;
    train_level(spec, 0, pairs.inputs.view(), pairs.targets.view(), cfg)
}

fn check_pairs(spec: &AutoencoderSpec, pairs: &TrainingPairs) -> Result<()> {
    if pairs.is_empty() {
        return Err(SaeError::Argument("no training data".into()));
    }
    if pairs.inputs.ncols() != spec.input_dim {
        return Err(SaeError::Argument(format!(
            "data width {} but spec input_dim {}",
            pairs.inputs.ncols(),
            spec.input_dim
        )));
    }
    Ok(())
}

/// Greedy layer-wise pretraining. Level `k` learns to denoise the codes of
/// the frozen levels below it; the first level reconstructs the targets.
pub fn pretrain_layerwise(
    spec: &AutoencoderSpec,
    pairs: &TrainingPairs,
    cfg: &TrainConfig,
) -> Result<(EncoderStack, Vec<LossTrace>)> {
    spec.validate()?;
    cfg.validate()?;
    check_pairs(spec, pairs)?;
    let mut enc_layers = Vec::new();
    let mut dec_layers = Vec::new();
    let mut traces = Vec::new();
    let mut codes = pairs.inputs.clone();
    for level in 0..spec.hidden_dims.len() {
        let target = if level == 0 { &pairs.targets } else { &codes };
        let (stack, trace) = train_level(spec, level, codes.view(), target.view(), cfg)?;
        let next = encode(&stack, codes.view())?;
        enc_layers.extend(stack.encoder.into_layers());
        dec_layers.extend(stack.decoder.into_layers());
        traces.push(trace);
        codes = next;
    }
    dec_layers.reverse();
    let stack = EncoderStack::new(Network::new(enc_layers)?, Network::new(dec_layers)?, spec.tied)?;
    Ok((stack, traces))
}

/// Trains the whole encoder and decoder jointly on reconstruction.
pub fn finetune_end2end(
    stack: &EncoderStack,
    pairs: &TrainingPairs,
    cfg: &TrainConfig,
    corrupt_rate: f32,
) -> Result<(EncoderStack, LossTrace)> {
    cfg.validate()?;
    if pairs.inputs.ncols() != stack.input_dim() || pairs.targets.ncols() != stack.output_dim() {
        return Err(SaeError::Argument(format!(
            "pairs are {}→{} wide, stack is {}→{}",
            pairs.inputs.ncols(),
            pairs.targets.ncols(),
            stack.input_dim(),
            stack.output_dim()
        )));
    }
    let mut out = stack.clone();
    let mut rng = RngState::with_stream(cfg.seed, FINETUNE_STREAM);
    let trace = train_reconstruction(
        &mut out,
        pairs.inputs.view(),
        pairs.targets.view(),
        corrupt_rate,
        cfg,
        &mut rng,
    )?;
    Ok((out, trace))
}

/// Adds the decoder's weight gradient (transposed) into the encoder's and
/// mirrors the sum back, so tied weights receive identical updates.
pub(crate) fn tie_gradients<T: crate::net::Scalar>(
    enc: &mut crate::net::Gradients<T>,
    dec: &mut crate::net::Gradients<T>,
) {
    let k = enc.layers.len();
    for i in 0..k {
        let d = &dec.layers[k - 1 - i].0;
        let sum = &enc.layers[i].0 + &d.t();
        dec.layers[k - 1 - i].0 = sum.t().as_standard_layout().into_owned();
        enc.layers[i].0 = sum;
    }
}

fn train_reconstruction(
    stack: &mut EncoderStack,
    inputs: ArrayView2<'_, f32>,
    targets: ArrayView2<'_, f32>,
    corrupt_rate: f32,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<LossTrace> {
    let n = inputs.nrows();
    let initial = {
        let z = encode(stack, inputs)?;
        let recon = infer_chunked(&stack.decoder, z.view())?;
        mse_loss(recon.view(), targets)?
    };
    let mut opt = OptimizerState::new(cfg.learning_rate, cfg.momentum)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0f64;
        for batch in order.chunks(cfg.batch_size) {
            let x = inputs.select(Axis(0), batch);
            let t = targets.select(Axis(0), batch);
            let (z, enc_cache) = stack.encoder.forward(x.view(), corrupt_rate, rng, true)?;
            let (y, dec_cache) = stack.decoder.forward(z.view(), 0.0, rng, false)?;
            let loss = mse_loss(y.view(), t.view())?;
            if !loss.is_finite() {
                return Err(SaeError::Divergence { epoch });
            }
            total += loss as f64 * batch.len() as f64;
            let (mut dec_grads, dz) = stack.decoder.backward(&dec_cache, mse_grad(y.view(), t.view())?.view())?;
            let (mut enc_grads, _) = stack.encoder.backward(&enc_cache, dz.view())?;
            if stack.tied {
                tie_gradients(&mut enc_grads, &mut dec_grads);
            }
            let mut params = stack.encoder.param_slices_mut();
            params.extend(stack.decoder.param_slices_mut());
            let mut grads = enc_grads.slices();
            grads.extend(dec_grads.slices());
            opt.step(params, grads).map_err(|e| match e {
                NetError::Divergence { .. } => SaeError::Divergence { epoch },
                other => other.into(),
            })?;
        }
        let mean = (total / n as f64) as f32;
        if !mean.is_finite() {
            return Err(SaeError::Divergence { epoch });
        }
        epochs.push(mean);
    }
    Ok(LossTrace { initial, epochs })
}
