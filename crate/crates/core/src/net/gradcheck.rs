use ndarray::{Array2, ArrayView2};

use super::{Network, Scalar};
use crate::Matrix;

/// `max_i |a_i − n_i| / max(|a_i|, |n_i|, 1e-8)`.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Central differences of `loss` with respect to every entry of every block
/// in `params`, in block order.
pub fn numeric_gradient<P, F>(params: &mut P, blocks: impl Fn(&mut P) -> Vec<&mut [f64]>, loss: F, epsilon: f64) -> Vec<f64>
where
    F: Fn(&P) -> f64,
{
    let sizes: Vec<usize> = blocks(params).iter().map(|b| b.len()).collect();
    let mut out = Vec::with_capacity(sizes.iter().sum());
    for (b, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = blocks(params)[b][i];
            blocks(params)[b][i] = orig + epsilon;
            let up = loss(params);
            blocks(params)[b][i] = orig - epsilon;
            let down = loss(params);
            blocks(params)[b][i] = orig;
            out.push((up - down) / (2.0 * epsilon));
        }
    }
    out
}

/// Checks [`Network::backward`] against central finite differences.
///
/// The network is promoted to `f64` so that the difference quotient is not
/// swamped by rounding. `loss` maps the network output to the scalar loss
/// and its gradient with respect to that output.
pub fn grad_check<T, L>(net: &Network<T>, batch: &Matrix, loss: L, epsilon: f64) -> f64
where
    T: Scalar,
    L: Fn(ArrayView2<'_, f64>) -> (f64, Array2<f64>),
{
    let mut wide: Network<f64> = net.cast();
    let x = batch.mapv(f64::from);
    let mut rng = super::RngState::new(0);
    let (y, cache) = wide
        .forward(x.view(), 0.0, &mut rng, false)
        .expect("grad_check batch matches network");
    let (_, upstream) = loss(y.view());
    let (grads, _) = wide.backward(&cache, upstream.view()).expect("fresh cache");
    let numeric = numeric_gradient(
        &mut wide,
        |n| n.param_slices_mut(),
        |n| loss(n.infer(x.view()).unwrap().view()).0,
        epsilon,
    );
    compare_gradients(&grads.flatten(), &numeric)
}
