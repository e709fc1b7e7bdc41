use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};

use super::assign::{hard_labels, kl_divergence, kl_gradients, soft_assign, target_distribution, DecLosses};
use super::kmeans::kmeans_fit;
use super::{ClusterModel, DecError, HyperParams, Result};
use crate::net::{
    compare_gradients, derive_seed, mse_grad, mse_loss, Gradients, NetError, Network,
    OptimizerState, RngState, Scalar,
};
use crate::sae::{encode, infer_chunked, tie_gradients, EncoderStack, TrainingPairs};
use crate::Matrix;

const KMEANS_TAG: u64 = 0x6b6d;
const DEC_STREAM: u64 = 3_000;

/// Full-data snapshot taken whenever the target distribution is refreshed.
#[derive(Debug, Clone, PartialEq)]
pub struct RefreshRecord {
    pub iteration: usize,
    pub kl: f32,
    pub recon: f32,
    pub total: f32,
    pub m1: Option<f64>,
}

pub trait TelemetrySink {
    fn record(&mut self, record: RefreshRecord);
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Telemetry {
    pub records: Vec<RefreshRecord>,
}

impl TelemetrySink for Telemetry {
    fn record(&mut self, record: RefreshRecord) {
        self.records.push(record);
    }
}

impl TelemetrySink for Vec<RefreshRecord> {
    fn record(&mut self, record: RefreshRecord) {
        self.push(record);
    }
}

impl Telemetry {
    /// `iter,kl,recon,total,m1`; `m1` is empty for unlabelled data.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,kl,recon,total,m1\n");
        for r in &self.records {
            let m1 = r.m1.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{m1}", r.iteration, r.kl, r.recon, r.total).unwrap();
        }
        out
    }
}

/// All trainable parameters of the clustering stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DecParams<T = f32> {
    pub encoder: Network<T>,
    pub decoder: Network<T>,
    pub centers: Array2<T>,
}

impl<T: Scalar> DecParams<T> {
    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.encoder.param_slices_mut();
        out.extend(self.decoder.param_slices_mut());
        out.push(self.centers.as_slice_mut().unwrap());
        out
    }

    pub fn cast<U: Scalar>(&self) -> DecParams<U> {
        DecParams {
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            centers: self.centers.mapv(|v| U::from(v).unwrap()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecGradients<T = f32> {
    pub encoder: Gradients<T>,
    pub decoder: Gradients<T>,
    pub centers: Array2<T>,
}

impl<T: Scalar> DecGradients<T> {
    fn slices(&self) -> Vec<&[T]> {
        let mut out = self.encoder.slices();
        out.extend(self.decoder.slices());
        out.push(self.centers.as_slice().unwrap());
        out
    }

    pub fn flatten(&self) -> Vec<T> {
        self.slices().into_iter().flatten().copied().collect()
    }
}

/// Minibatch objective (KL from the soft assignment to the fixed target, plus
/// `lambda` times the reconstruction MSE) and its exact gradient with respect
/// to encoder, decoder and centers.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective<T: Scalar>(
    params: &DecParams<T>,
    inputs: ArrayView2<'_, T>,
    targets: ArrayView2<'_, T>,
    p: ArrayView2<'_, T>,
    nu: T,
    lambda: T,
    tied: bool,
) -> Result<(DecLosses<T>, DecGradients<T>)> {
    let mut no_dropout = RngState::new(0);
    let (z, enc_cache) = params.encoder.forward(inputs, 0.0, &mut no_dropout, false)?;
    let (y, dec_cache) = params.decoder.forward(z.view(), 0.0, &mut no_dropout, false)?;
    let recon = mse_loss(y.view(), targets)?;
    let dy = mse_grad(y.view(), targets)?.mapv(|v| v * lambda);
    let (mut dec_grads, dz_recon) = params.decoder.backward(&dec_cache, dy.view())?;

    let q = soft_assign(z.view(), params.centers.view(), nu)?;
    let (kl, _) = kl_divergence(p, q.view())?;
    let (dz_kl, dmu) = kl_gradients(z.view(), params.centers.view(), q.view(), p, nu)?;

    let dz = dz_recon + dz_kl;
    let (mut enc_grads, _) = params.encoder.backward(&enc_cache, dz.view())?;
    if tied {
        tie_gradients(&mut enc_grads, &mut dec_grads);
    }
    Ok((
        DecLosses {
            kl,
            recon,
            total: kl + lambda * recon,
        },
        DecGradients {
            encoder: enc_grads,
            decoder: dec_grads,
            centers: dmu,
        },
    ))
}

/// Finite-difference check of [`batch_objective`] over every parameter
/// (encoder, decoder, centers), evaluated in `f64`. Returns the maximum
/// relative error.
#[allow(clippy::too_many_arguments)]
pub fn dec_grad_check(
    stack: &EncoderStack,
    centers: &Matrix,
    inputs: &Matrix,
    targets: &Matrix,
    p: &Array2<f64>,
    nu: f64,
    lambda: f64,
    epsilon: f64,
) -> Result<f64> {
    let mut params: DecParams<f64> = DecParams {
        encoder: stack.encoder.cast(),
        decoder: stack.decoder.cast(),
        centers: centers.mapv(f64::from),
    };
    let x = inputs.mapv(f64::from);
    let t = targets.mapv(f64::from);
    let (_, grads) = batch_objective(&params, x.view(), t.view(), p.view(), nu, lambda, false)?;
    let numeric = crate::net::numeric_gradient(
        &mut params,
        |p| p.slices_mut(),
        |params| {
            batch_objective(params, x.view(), t.view(), p.view(), nu, lambda, false)
                .map(|(l, _)| l.total)
                .unwrap_or(f64::NAN)
        },
        epsilon,
    );
    Ok(compare_gradients(&grads.flatten(), &numeric))
}

/// Target distribution, telemetry record, and the reseeded empty cluster if any.
type Refreshed = (Array2<f32>, RefreshRecord, Option<(usize, Vec<f32>)>);

fn refresh(
    params: &DecParams,
    pairs: &TrainingPairs,
    hp: &HyperParams,
    gold: Option<&[usize]>,
    iteration: usize,
) -> Result<Refreshed> {
    let z = infer_chunked(&params.encoder, pairs.inputs.view())?;
    let mut centers = params.centers.clone();
    let mut q = soft_assign(z.view(), centers.view(), hp.nu)?;
    let mut reseeded = None;
    let p = match target_distribution(q.view()) {
        Ok(p) => p,
        Err(DecError::DegenerateCluster { cluster }) => {
            let far = farthest_point(z.view(), centers.view());
            log::warn!(
                "cluster {cluster} lost all mass at iteration {iteration}; re-seeding it at point {far}"
            );
            centers.row_mut(cluster).assign(&z.row(far));
            reseeded = Some((cluster, z.row(far).to_vec()));
            q = soft_assign(z.view(), centers.view(), hp.nu)?;
            target_distribution(q.view())?
        }
        Err(e) => return Err(e),
    };
    let y = infer_chunked(&params.decoder, z.view())?;
    let recon = mse_loss(y.view(), pairs.targets.view())?;
    let losses = super::dec_losses(p.view(), q.view(), recon, hp.lambda)?;
    let m1 = gold.map(|g| crate::eval::m1_from_labels(&hard_labels(q.view()), g).unwrap_or(0.0));
    let record = RefreshRecord {
        iteration,
        kl: losses.kl,
        recon: losses.recon,
        total: losses.total,
        m1,
    };
    Ok((p, record, reseeded))
}

/// Index of the point whose nearest center is farthest away.
fn farthest_point(z: ArrayView2<'_, f32>, centers: ArrayView2<'_, f32>) -> usize {
    let nearest: Vec<f32> = crate::parallel::map_range(z.nrows(), |i| {
        centers
            .rows()
            .into_iter()
            .map(|c| z.row(i).iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f32>())
            .fold(f32::INFINITY, f32::min)
    });
    let mut best = 0;
    for (i, &d) in nearest.iter().enumerate() {
        if d > nearest[best] {
            best = i;
        }
    }
    best
}

/// Runs the clustering stage. Centers start at KMeans on the encoded data;
/// each of `hp.iterations` steps backpropagates the joint loss on one
/// minibatch. Gold labels, when given, only feed the telemetry M1.
pub fn dec_fit(
    stack: &EncoderStack,
    pairs: &TrainingPairs,
    gold: Option<&[usize]>,
    hp: &HyperParams,
    telemetry: &mut dyn TelemetrySink,
) -> Result<ClusterModel> {
    hp.validate()?;
    let n = pairs.len();
    if n < hp.m {
        return Err(DecError::Argument(format!("{n} items cannot fill {} clusters", hp.m)));
    }
    if pairs.inputs.ncols() != stack.input_dim() || pairs.targets.ncols() != stack.output_dim() {
        return Err(DecError::Shape(format!(
            "pairs are {}→{} wide, stack is {}→{}",
            pairs.inputs.ncols(),
            pairs.targets.ncols(),
            stack.input_dim(),
            stack.output_dim()
        )));
    }
    if let Some(g) = gold {
        if g.len() != n {
            return Err(DecError::Shape(format!("{} gold labels for {n} items", g.len())));
        }
    }
    let z = encode(stack, pairs.inputs.view())?;
    let km = kmeans_fit(z.view(), hp.m, derive_seed(hp.seed, KMEANS_TAG), hp.kmeans_restarts)?;
    let mut params = DecParams {
        encoder: stack.encoder.clone(),
        decoder: stack.decoder.clone(),
        centers: km.centers,
    };
    let mut opt = OptimizerState::new(hp.learning_rate, hp.momentum)?;
    let mut rng = RngState::with_stream(hp.seed, DEC_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut p_full = Array2::<f32>::zeros((n, hp.m));

    for it in 0..hp.iterations {
        if it % hp.target_update_interval == 0 {
            let (p, record, reseeded) = refresh(&params, pairs, hp, gold, it)?;
            if !record.total.is_finite() {
                return Err(DecError::Divergence { iteration: it });
            }
            if let Some((cluster, code)) = reseeded {
                params
                    .centers
                    .row_mut(cluster)
                    .assign(&ndarray::ArrayView1::from(&code));
            }
            telemetry.record(record);
            p_full = p;
        }
        if cursor >= n {
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let end = (cursor + hp.batch_size).min(n);
        let batch = &order[cursor..end];
        cursor = end;

        let x = pairs.inputs.select(Axis(0), batch);
        let t = pairs.targets.select(Axis(0), batch);
        let p = p_full.select(Axis(0), batch);
        let (losses, grads) = batch_objective(&params, x.view(), t.view(), p.view(), hp.nu, hp.lambda, stack.tied)?;
        if !losses.total.is_finite() {
            return Err(DecError::Divergence { iteration: it });
        }
        opt.step(params.slices_mut(), grads.slices())
            .map_err(|e| match e {
                NetError::Divergence { .. } => DecError::Divergence { iteration: it },
                other => other.into(),
            })?;
    }

    let stack = EncoderStack::new(params.encoder, params.decoder, stack.tied)?;
    ClusterModel::new(stack, params.centers, hp.nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dec::predict_hard;
    use crate::net::{Activation, Dense, LinearLayer};
    use crate::sae::{pretrain_layerwise, AutoencoderSpec, TrainConfig};

    fn blobs(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = RngState::new(seed);
        let centers = [[3.0f32, 0.0, 0.0, 1.0], [-3.0, 0.0, 1.0, 0.0], [0.0, 3.0, -1.0, 0.0]];
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let x = Array2::from_shape_fn((n, 4), |(i, k)| centers[labels[i]][k] + rng.uniform_in(-0.5, 0.5));
        (x, labels)
    }

    fn small_stack(seed: u64) -> EncoderStack {
        let mut rng = RngState::new(seed);
        let enc = Network::random(&[4, 2], &[Activation::Identity], &mut rng).unwrap();
        let dec = Network::random(&[2, 4], &[Activation::Identity], &mut rng).unwrap();
        EncoderStack::new(enc, dec, false).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_kmeans_centers() {
        let (x, _) = blobs(90, 1);
        let stack = small_stack(2);
        let hp = HyperParams { m: 3, iterations: 5, learning_rate: 0.0, seed: 4, ..Default::default() };
        let model = dec_fit(&stack, &TrainingPairs::plain(x.clone()), None, &hp, &mut Telemetry::default()).unwrap();
        let z = encode(&stack, x.view()).unwrap();
        let km = kmeans_fit(z.view(), 3, derive_seed(4, KMEANS_TAG), hp.kmeans_restarts).unwrap();
        assert_eq!(model.centers, km.centers);
        assert_eq!(model.stack, stack);
    }

    #[test]
    fn zero_iterations_is_kmeans() {
        let (x, _) = blobs(60, 3);
        let stack = small_stack(3);
        let hp = HyperParams { m: 3, iterations: 0, seed: 9, ..Default::default() };
        let mut tel = Telemetry::default();
        let model = dec_fit(&stack, &TrainingPairs::plain(x.clone()), None, &hp, &mut tel).unwrap();
        assert!(tel.records.is_empty());
        let z = encode(&stack, x.view()).unwrap();
        let km = kmeans_fit(z.view(), 3, derive_seed(9, KMEANS_TAG), hp.kmeans_restarts).unwrap();
        let (labels, _) = predict_hard(&model, x.view()).unwrap();
        assert_eq!(labels, km.assignments);
    }

    #[test]
    fn telemetry_has_one_record_per_refresh() {
        let (x, gold) = blobs(90, 5);
        let stack = small_stack(5);
        for (iterations, interval) in [(10, 3), (9, 3), (1, 100), (250, 100)] {
            let hp = HyperParams { m: 3, iterations, target_update_interval: interval, seed: 1, ..Default::default() };
            let mut tel = Telemetry::default();
            dec_fit(&stack, &TrainingPairs::plain(x.clone()), Some(&gold), &hp, &mut tel).unwrap();
            assert_eq!(tel.records.len(), iterations.div_ceil(interval));
            assert!(tel.records.iter().all(|r| r.m1.is_some()));
        }
    }

    #[test]
    fn lambda_zero_leaves_decoder_alone() {
        let (x, _) = blobs(90, 6);
        let stack = small_stack(6);
        let hp = HyperParams { m: 3, iterations: 50, lambda: 0.0, learning_rate: 0.01, seed: 2, ..Default::default() };
        let model = dec_fit(&stack, &TrainingPairs::plain(x), None, &hp, &mut Telemetry::default()).unwrap();
        assert_eq!(model.stack.decoder, stack.decoder);
        assert_ne!(model.stack.encoder, stack.encoder);
    }

    #[test]
    fn gradient_check_small_configurations() {
        for seed in 0..4u64 {
            let mut rng = RngState::new(seed);
            let act = if seed % 2 == 0 { Activation::Identity } else { Activation::Relu };
            let mut enc = Network::random(&[5, 4, 3], &[act, Activation::Identity], &mut rng).unwrap();
            let mut dec = Network::random(&[3, 4, 5], &[act, Activation::Identity], &mut rng).unwrap();
            for layer in enc.layers_mut().iter_mut().chain(dec.layers_mut()) {
                layer.linear.bias.mapv_inplace(|_| rng.uniform_in(-0.5, 0.5));
            }
            let stack = EncoderStack::new(enc, dec, false).unwrap();
            let x = Matrix::from_shape_fn((6, 5), |_| rng.uniform_in(-1.0, 1.0));
            let centers = Matrix::from_shape_fn((3, 3), |_| rng.uniform_in(-1.0, 1.0));
            let p = Array2::from_shape_fn((6, 3), |_| 0.1 + rng.uniform() as f64);
            let p = &p / &p.sum_axis(Axis(1)).insert_axis(Axis(1));
            let err = dec_grad_check(&stack, &centers, &x, &x, &p, 1.0, 5.0, 1e-4).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn degenerate_cluster_gets_reseeded() {
        // Center 1 sits so far away that its soft mass underflows to zero.
        let x = Matrix::from_shape_fn((20, 2), |(i, k)| (i as f32) * 0.1 + k as f32);
        let id = Network::new(vec![Dense { linear: LinearLayer::identity(2), activation: Activation::Identity }]).unwrap();
        let stack = EncoderStack::new(id.clone(), id, false).unwrap();
        let params = DecParams {
            encoder: stack.encoder.clone(),
            decoder: stack.decoder.clone(),
            centers: ndarray::array![[0.5f32, 1.5], [1e30, 1e30]],
        };
        let hp = HyperParams { m: 2, ..Default::default() };
        let (p, _, reseeded) = refresh(&params, &TrainingPairs::plain(x.clone()), &hp, None, 0).unwrap();
        let (cluster, code) = reseeded.expect("cluster 1 re-seeded");
        assert_eq!(cluster, 1);
        assert_eq!(code, x.row(19).to_vec());
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn end_to_end_on_easy_blobs() {
        let (x, gold) = blobs(300, 8);
        let spec = AutoencoderSpec { input_dim: 4, hidden_dims: vec![2], ..Default::default() };
        let cfg = TrainConfig { epochs: 20, seed: 1, learning_rate: 0.01, ..Default::default() };
        let pairs = TrainingPairs::plain(x.clone());
        let (stack, _) = pretrain_layerwise(&spec, &pairs, &cfg).unwrap();
        let hp = HyperParams { m: 3, iterations: 300, seed: 1, ..Default::default() };
        let model = dec_fit(&stack, &pairs, Some(&gold), &hp, &mut Telemetry::default()).unwrap();
        let (labels, q) = predict_hard(&model, x.view()).unwrap();
        assert_eq!(labels, hard_labels(q.view()));
        let m1 = crate::eval::m1_from_labels(&labels, &gold).unwrap();
        assert!(m1 > 0.95, "m1 {m1}");
    }
}
