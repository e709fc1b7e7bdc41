use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::{Activation, NetError, Result, RngState, Scalar};

/// `y = x Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<T = f32> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> LinearLayer<T> {
    pub fn new(weights: Array2<T>, bias: Array1<T>) -> Result<Self> {
        let (out, inp) = weights.dim();
        if out == 0 || inp == 0 {
            return Err(NetError::Invalid("layer dimensions must be positive".into()));
        }
        if bias.len() != out {
            return Err(NetError::Invalid(format!(
                "bias has {} entries for {out} outputs",
                bias.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(NetError::Invalid("non-finite parameter".into()));
        }
        Ok(LinearLayer {
            weights: weights.as_standard_layout().into_owned(),
            bias,
        })
    }

    /// Weights uniform in `±1/√in_dim`, zero bias.
    pub fn random(in_dim: usize, out_dim: usize, rng: &mut RngState) -> Self {
        let bound = 1.0 / (in_dim as f32).sqrt();
        let weights = Array2::from_shape_fn((out_dim, in_dim), |_| {
            T::from_f32(rng.uniform_in(-bound, bound)).unwrap()
        });
        LinearLayer {
            weights,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn identity(n: usize) -> Self {
        LinearLayer {
            weights: Array2::eye(n),
            bias: Array1::zeros(n),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn cast<U: Scalar>(&self) -> LinearLayer<U> {
        LinearLayer {
            weights: self.weights.mapv(|v| U::from(v).unwrap()),
            bias: self.bias.mapv(|v| U::from(v).unwrap()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f32> {
    pub linear: LinearLayer<T>,
    pub activation: Activation,
}

/// Ordered stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    layers: Vec<Dense<T>>,
}

/// Per-layer inputs and pre-activations recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f32> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> ForwardCache<T> {
    /// The (post-dropout) network input.
    pub fn input(&self) -> &Array2<T> {
        &self.inputs[0]
    }
}

/// Gradients shaped like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub layers: Vec<(Array2<T>, Array1<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.linear.weights.raw_dim()),
                        Array1::zeros(l.linear.out_dim()),
                    )
                })
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.as_slice().unwrap(), b.as_slice().unwrap()])
            .collect()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.slices().into_iter().flatten().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<Dense<T>>) -> Result<Self> {
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].linear.out_dim() != pair[1].linear.in_dim() {
                return Err(NetError::Invalid(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].linear.out_dim(),
                    k + 1,
                    pair[1].linear.in_dim()
                )));
            }
        }
        Ok(Network { layers })
    }

    /// Randomly initialised network with widths `dims[0] → dims[1] → …`.
    pub fn random(dims: &[usize], activations: &[Activation], rng: &mut RngState) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(NetError::Invalid(
                "need one activation per layer and at least one layer".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(NetError::Invalid("layer widths must be positive".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Dense {
                linear: LinearLayer::random(w[0], w[1], rng),
                activation,
            })
            .collect();
        Network::new(layers)
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Dense<T>> {
        self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.linear.in_dim())
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.linear.out_dim())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.linear.weights.len() + l.linear.bias.len())
            .sum()
    }

    /// Weights (row-major) and bias of every layer, in layer order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let LinearLayer { weights, bias } = &mut l.linear;
                if !weights.is_standard_layout() {
                    *weights = weights.as_standard_layout().into_owned();
                }
                if !bias.is_standard_layout() {
                    *bias = bias.as_standard_layout().into_owned();
                }
                [weights.as_slice_mut().unwrap(), bias.as_slice_mut().unwrap()]
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    linear: l.linear.cast(),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.in_dim() {
            return Err(NetError::Shape(format!(
                "batch width {width} but network expects {}",
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass recording what [`Network::backward`] needs.
    ///
    /// When `training` is set and `dropout_rate > 0`, inverted dropout is
    /// applied to the input only. A zero rate draws nothing from `rng`.
    pub fn forward(
        &self,
        batch: ArrayView2<'_, T>,
        dropout_rate: f32,
        rng: &mut RngState,
        training: bool,
    ) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.check_input(batch.ncols())?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(NetError::Invalid(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        let mut x = batch.to_owned();
        if training && dropout_rate > 0.0 {
            let keep_scale = T::from_f32(1.0 / (1.0 - dropout_rate)).unwrap();
            for v in x.iter_mut() {
                *v = if rng.uniform() < dropout_rate {
                    T::zero()
                } else {
                    *v * keep_scale
                };
            }
        }
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            shapes: self.layers.iter().map(|l| l.linear.weights.dim()).collect(),
        };
        for layer in &self.layers {
            let pre = x.dot(&layer.linear.weights.t()) + &layer.linear.bias;
            let act = layer.activation;
            let out = pre.mapv(|v| act.apply(v));
            cache.inputs.push(x);
            cache.pre.push(pre);
            x = out;
        }
        Ok((x, cache))
    }

    /// Deterministic forward pass with no dropout.
    pub fn infer(&self, batch: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(batch.ncols())?;
        let mut x = batch.to_owned();
        for layer in &self.layers {
            let act = layer.activation;
            x = (x.dot(&layer.linear.weights.t()) + &layer.linear.bias).mapv(|v| act.apply(v));
        }
        Ok(x)
    }

    /// Gradients of a scalar loss given `∂loss/∂output`. Returns parameter
    /// gradients and the gradient with respect to the post-dropout input.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        loss_grad: ArrayView2<'_, T>,
    ) -> Result<(Gradients<T>, Array2<T>)> {
        let shapes: Vec<_> = self.layers.iter().map(|l| l.linear.weights.dim()).collect();
        if cache.shapes != shapes || cache.inputs.len() != self.layers.len() {
            return Err(NetError::State("cache was produced by a different network".into()));
        }
        let rows = cache.inputs.first().map_or(0, |x| x.nrows());
        if loss_grad.dim() != (rows, self.out_dim()) {
            return Err(NetError::Shape(format!(
                "loss gradient is {:?}, expected {:?}",
                loss_grad.dim(),
                (rows, self.out_dim())
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = loss_grad.to_owned();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            let mut delta = upstream;
            if act != super::Activation::Identity {
                Zip::from(&mut delta)
                    .and(&cache.pre[k])
                    .for_each(|d, &p| *d = *d * act.derivative(p));
            }
            let dw = delta.t().dot(&cache.inputs[k]);
            let db = delta.sum_axis(Axis(0));
            upstream = delta.dot(&layer.linear.weights);
            grads.push((dw, db));
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, upstream))
    }
}

/// Sum of squared row errors divided by the number of rows.
pub fn mse_loss<T: Scalar>(pred: ArrayView2<'_, T>, target: ArrayView2<'_, T>) -> Result<T> {
    if pred.dim() != target.dim() {
        return Err(NetError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let rows = pred.nrows();
    if rows == 0 {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    Zip::from(&pred).and(&target).for_each(|&p, &t| {
        let d = p - t;
        total = total + d * d;
    });
    Ok(total / T::from_usize(rows).unwrap())
}

/// Gradient of [`mse_loss`] with respect to `pred`.
pub fn mse_grad<T: Scalar>(pred: ArrayView2<'_, T>, target: ArrayView2<'_, T>) -> Result<Array2<T>> {
    if pred.dim() != target.dim() {
        return Err(NetError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let scale = T::from_f64(2.0).unwrap() / T::from_usize(pred.nrows().max(1)).unwrap();
    Ok((&pred - &target).mapv(|d| d * scale))
}
