use super::{Gradients, NetError, Network, Result, Scalar};

/// SGD with classical momentum: `v ← μ·v − lr·g; θ ← θ + v`.
///
/// Velocity buffers are keyed by parameter block order and created on the
/// first step.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(learning_rate: T, momentum: T) -> Result<Self> {
        if !(learning_rate >= T::zero()) || !learning_rate.is_finite() {
            return Err(NetError::Invalid("learning rate must be finite and non-negative".into()));
        }
        if !(momentum >= T::zero() && momentum < T::one()) {
            return Err(NetError::Invalid("momentum must lie in [0, 1)".into()));
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    /// Updates every parameter block in place. Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(NetError::Shape(format!(
                "{} parameter blocks but {} gradient blocks",
                params.len(),
                grads.len()
            )));
        }
        for (block, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != g.len() {
                return Err(NetError::Shape(format!(
                    "block {block}: {} parameters, {} gradients",
                    p.len(),
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NetError::Divergence { block });
            }
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
        } else if self.velocity.len() != grads.len()
            || self.velocity.iter().zip(&grads).any(|(v, g)| v.len() != g.len())
        {
            return Err(NetError::Shape("velocity buffers do not match parameters".into()));
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = self.momentum * *v - self.learning_rate * g;
                *p = *p + *v;
            }
        }
        Ok(())
    }
}

pub fn sgd_step<T: Scalar>(
    net: &mut Network<T>,
    grads: &Gradients<T>,
    opt: &mut OptimizerState<T>,
) -> Result<()> {
    opt.step(net.param_slices_mut(), grads.slices())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_without_momentum() {
        let mut opt = OptimizerState::new(0.5f32, 0.0).unwrap();
        let mut p = vec![1.0f32, -1.0];
        opt.step(vec![&mut p], vec![&[2.0, -4.0]]).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = OptimizerState::new(0.1f32, 0.9).unwrap();
        let mut p = vec![3.0f32];
        opt.step(vec![&mut p], vec![&[0.0]]).unwrap();
        assert_eq!(p, vec![3.0]);
    }

    #[test]
    fn momentum_hand_iteration() {
        let mut opt = OptimizerState::new(0.1f64, 0.9).unwrap();
        let mut theta = vec![0.0f64];
        opt.step(vec![&mut theta], vec![&[1.0]]).unwrap();
        assert!((theta[0] + 0.1).abs() < 1e-12);
        opt.step(vec![&mut theta], vec![&[1.0]]).unwrap();
        assert!((theta[0] + 0.29).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut opt = OptimizerState::new(0.1f32, 0.9).unwrap();
        let mut a = vec![1.0f32];
        let mut b = vec![1.0f32];
        let r = opt.step(vec![&mut a, &mut b], vec![&[0.5], &[f32::NAN]]);
        assert_eq!(r, Err(NetError::Divergence { block: 1 }));
        assert_eq!(a, vec![1.0]);
    }

    #[test]
    fn shape_changes_are_rejected() {
        let mut opt = OptimizerState::new(0.1f32, 0.9).unwrap();
        let mut a = vec![1.0f32];
        opt.step(vec![&mut a], vec![&[0.5]]).unwrap();
        let mut b = vec![1.0f32, 2.0];
        assert!(opt.step(vec![&mut b], vec![&[0.5, 0.5]]).is_err());
    }
}
