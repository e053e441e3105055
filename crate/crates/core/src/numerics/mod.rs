//! Dense layers, activations, softmax, RMSProp and finite-difference checks.
//!
//! Everything here is generic over [`Scalar`] so the same code runs in `f32`
//! or `f64`; the learning stages instantiate it at `f64`.

mod dense;
pub mod gradcheck;
mod mlp;
mod optim;
mod params;
mod scalar;
mod softmax;

pub use dense::Dense;
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use mlp::{Activation, Mlp, MlpTape};
pub use optim::{clip_gradients, RmsProp, RMS_DECAY, RMS_EPS};
pub use params::{flatten, Parameterized};
pub use scalar::{axpy, dot, l2_norm, Scalar};
pub use softmax::{log_softmax, nll_backward, softmax, softmax_backward};

use thiserror::Error;

/// LeakyReLU negative slope used by graph attention scoring.
pub const LEAKY_SLOPE: f64 = 0.2;

#[inline]
pub fn leaky_relu<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        x * F::lit(LEAKY_SLOPE)
    }
}

#[inline]
pub fn leaky_relu_derivative<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else {
        F::lit(LEAKY_SLOPE)
    }
}

pub fn one_hot<F: Scalar>(index: usize, n: usize) -> Vec<F> {
    let mut v = vec![F::zero(); n];
    v[index] = F::one();
    v
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<F: Scalar>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum NumericsError {
    #[error("shape mismatch at layer {layer}: expected input of length {expected}, got {got}")]
    Shape {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("backward called without a recorded forward pass")]
    NoForward,
}
