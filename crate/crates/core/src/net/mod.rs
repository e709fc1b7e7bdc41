//! Dense feedforward network with input dropout, MSE loss, exact
//! backpropagation and SGD with classical momentum.
//!
//! Everything is generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference checking.

mod gradcheck;
mod network;
mod optim;
mod rng;

use std::fmt::Debug;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use thiserror::Error;

pub use gradcheck::{compare_gradients, grad_check, numeric_gradient};
pub use network::{mse_grad, mse_loss, Dense, ForwardCache, Gradients, LinearLayer, Network};
pub use optim::{sgd_step, OptimizerState};
pub use rng::{derive_seed, RngState};

pub trait Scalar:
    Float + FromPrimitive + LinalgScalar + ScalarOperand + Send + Sync + Debug + std::iter::Sum + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    pub(crate) fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
        }
    }

    #[inline]
    pub(crate) fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("stale or mismatched forward cache: {0}")]
    State(String),
    #[error("non-finite gradient in parameter block {block}")]
    Divergence { block: usize },
    #[error("invalid network: {0}")]
    Invalid(String),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;
