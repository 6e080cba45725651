//! Differentiable primitives.
//!
//! Every op implements [`DifferentiableOp`]: a forward pass that may cache
//! state on `self`, and a backward pass mapping the upstream gradient to one
//! gradient per input. Gradients are only materialised for inputs flagged in
//! `wanted`. The free functions at the bottom of this module are the plain
//! (non-recording) entry points.

mod basic;
mod conv;
mod norm;

pub use basic::{
    Activation, Affine, ColMaxCenter, LinearCombination, LogEpsSum, Pool, PoolMode, ReconKind,
    ReconLoss, Reshape, Softmax, SquaredError, WeightedPool,
};
pub use conv::{Conv, ConvTranspose};
pub use norm::{BatchNorm, BnMode, RunningStats, BN_EPS, BN_MOMENTUM};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub type Grads<T> = Vec<Option<Tensor<T>>>;

pub trait DifferentiableOp<T: Scalar>: Send {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    /// Must be called after `forward` on the same inputs. Returned gradients
    /// have the shapes of the corresponding inputs.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>>;
}

pub(crate) fn arity<T>(name: &'static str, inputs: &[&Tensor<T>], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::dim(
            name,
            format!("expected {n} inputs, got {}", inputs.len()),
        ));
    }
    Ok(())
}

pub fn affine<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    Affine.forward(&[x, w, b])
}

pub fn elu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Activation::Elu.forward(&[x])
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Activation::Sigmoid.forward(&[x])
}

pub fn softmax<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    Softmax.forward(&[v])
}

/// Valid cross-correlation of `x: [c_in,h,w]` (or batched `[n,c_in,h,w]`).
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    Conv::new(2, stride).forward(&[x, k, b])
}

pub fn conv3d<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    Conv::new(3, stride).forward(&[x, k, b])
}

/// Adjoint of [`conv2d`]: `k` has the same `[c_z, c_out, kh, kw]` layout as
/// the conv it transposes.
pub fn conv_transpose2d<T: Scalar>(
    z: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    ConvTranspose::new(2, stride).forward(&[z, k, b])
}

pub fn conv_transpose3d<T: Scalar>(
    z: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    ConvTranspose::new(3, stride).forward(&[z, k, b])
}

/// Batch normalisation over `[n, c, ...]`. In train mode the running
/// statistics in `state` are updated in place.
pub fn batchnorm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mode: BnMode,
    state: &mut RunningStats<T>,
) -> Result<Tensor<T>> {
    let mut op = BatchNorm::new(mode, state.clone());
    let out = op.forward(&[x, gamma, beta])?;
    if mode == BnMode::Train {
        op.update_running(state);
    }
    Ok(out)
}
