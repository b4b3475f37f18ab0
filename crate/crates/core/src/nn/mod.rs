//! Minimal neural-network kernels: convolution, transposed convolution,
//! max pooling, affine layers, activations, and Adam.
//!
//! Everything is generic over [`Scalar`] so the same code runs at `f32` for
//! training and at `f64` for finite-difference gradient verification.
//!
//! Shape conventions: batched images are `[n, c, h, w]`, batched vectors are
//! `[n, d]`. Convolutions lower to matrix multiplication through an
//! `[n*positions, c*kh*kw]` patch matrix so the whole batch is one GEMM.
//! Batch reductions (weight gradients, bias gradients) are single GEMM or
//! ordered sums, which keeps results bit-identical run to run.

mod adam;
mod conv;
mod init;
mod linear;
mod pool;

pub use adam::{Adam, AdamParams};
pub use conv::{conv_out_dim, convt_out_dim, Conv2d, Conv2dGrads, ConvT2d, ConvT2dGrads};
pub use init::he_uniform;
pub use linear::{Linear, LinearGrads};
pub use pool::{MaxPool2d, PoolCache};

use crate::weights::Dtype;
use ndarray::ScalarOperand;
use num_traits::Float;

/// Floating point element type usable in every kernel.
pub trait Scalar:
    Float
    + num_traits::FromPrimitive
    + ScalarOperand
    + ndarray::LinalgScalar
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn fromf64(v: f64) -> Self;
    fn tof64(self) -> f64;
    fn dtype() -> Dtype;
}

impl Scalar for f32 {
    fn fromf64(v: f64) -> Self {
        v as f32
    }
    fn tof64(self) -> f64 {
        self as f64
    }
    fn dtype() -> Dtype {
        Dtype::F32
    }
}

impl Scalar for f64 {
    fn fromf64(v: f64) -> Self {
        v
    }
    fn tof64(self) -> f64 {
        self
    }
    fn dtype() -> Dtype {
        Dtype::F64
    }
}

/// Elementwise rectifier, returning a fresh array.
pub fn relu<F: Scalar, D: ndarray::Dimension>(x: &ndarray::Array<F, D>) -> ndarray::Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient of `relu` given its output `y` and incoming gradient `gy`.
pub fn relu_backward<F: Scalar, D: ndarray::Dimension>(
    y: &ndarray::Array<F, D>,
    gy: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    let mut gx = gy.clone();
    gx.zip_mut_with(y, |g, &v| {
        if v <= F::zero() {
            *g = F::zero();
        }
    });
    gx
}

/// Elementwise logistic sigmoid.
pub fn sigmoid<F: Scalar, D: ndarray::Dimension>(
    x: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    x.mapv(|v| F::one() / (F::one() + (-v).exp()))
}

/// Gradient of `sigmoid` given its output `y` and incoming gradient `gy`.
pub fn sigmoid_backward<F: Scalar, D: ndarray::Dimension>(
    y: &ndarray::Array<F, D>,
    gy: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    let mut gx = gy.clone();
    gx.zip_mut_with(y, |g, &v| *g = *g * v * (F::one() - v));
    gx
}
