use crate::error::Result;
use crate::nn::ops::{self, Padding};
use crate::tensor::{Scalar, Tensor4};

/// Layer vocabulary shared by the recording [`Tape`](super::Tape) and the
/// non-recording [`Eager`] executor, so each network is wired once.
pub trait Graph<T: Scalar> {
    type Value: Clone;

    /// A constant with no gradient.
    fn constant(&mut self, t: Tensor4<T>) -> Self::Value;
    /// A named trainable parameter. Binding the same name twice yields the
    /// same node.
    fn param(&mut self, name: &str, t: &Tensor4<T>) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor4<T>;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        kernel: &Self::Value,
        bias: &Self::Value,
        stride: usize,
        padding: Padding,
    ) -> Result<Self::Value>;
    fn prelu(&mut self, x: &Self::Value, slope: &Self::Value) -> Result<Self::Value>;
    fn leaky_relu(&mut self, x: &Self::Value, slope: f64) -> Self::Value;
    fn tanh(&mut self, x: &Self::Value) -> Self::Value;
    fn sigmoid(&mut self, x: &Self::Value) -> Self::Value;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// Batch statistics normalisation. Also returns the batch mean and
    /// (biased) variance so the caller can update running statistics.
    fn batch_norm_train(
        &mut self,
        x: &Self::Value,
        scale: &Self::Value,
        shift: &Self::Value,
        eps: f64,
    ) -> Result<(Self::Value, Vec<T>, Vec<T>)>;
    #[allow(clippy::too_many_arguments)]
    fn batch_norm_infer(
        &mut self,
        x: &Self::Value,
        scale: &Self::Value,
        shift: &Self::Value,
        running_mean: &Self::Value,
        running_var: &Self::Value,
        eps: f64,
    ) -> Result<Self::Value>;
    fn dense(
        &mut self,
        x: &Self::Value,
        weights: &Self::Value,
        bias: &Self::Value,
    ) -> Result<Self::Value>;
}

/// Evaluates layers immediately and keeps nothing for a backward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<T: Scalar> Graph<T> for Eager {
    type Value = Tensor4<T>;

    fn constant(&mut self, t: Tensor4<T>) -> Tensor4<T> {
        t
    }

    fn param(&mut self, _name: &str, t: &Tensor4<T>) -> Tensor4<T> {
        t.clone()
    }

    fn value<'a>(&'a self, v: &'a Tensor4<T>) -> &'a Tensor4<T> {
        v
    }

    fn conv2d(
        &mut self,
        x: &Tensor4<T>,
        kernel: &Tensor4<T>,
        bias: &Tensor4<T>,
        stride: usize,
        padding: Padding,
    ) -> Result<Tensor4<T>> {
        ops::conv2d(x, kernel, bias, stride, padding)
    }

    fn prelu(&mut self, x: &Tensor4<T>, slope: &Tensor4<T>) -> Result<Tensor4<T>> {
        ops::prelu(x, slope)
    }

    fn leaky_relu(&mut self, x: &Tensor4<T>, slope: f64) -> Tensor4<T> {
        ops::leaky_relu(x, slope)
    }

    fn tanh(&mut self, x: &Tensor4<T>) -> Tensor4<T> {
        ops::tanh(x)
    }

    fn sigmoid(&mut self, x: &Tensor4<T>) -> Tensor4<T> {
        ops::sigmoid(x)
    }

    fn add(&mut self, a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut out = a.clone();
        out.add_assign(b)?;
        Ok(out)
    }

    fn batch_norm_train(
        &mut self,
        x: &Tensor4<T>,
        scale: &Tensor4<T>,
        shift: &Tensor4<T>,
        eps: f64,
    ) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
        let bn = ops::batch_norm_train(x, scale, shift, eps)?;
        Ok((bn.output, bn.batch_mean, bn.batch_var))
    }

    fn batch_norm_infer(
        &mut self,
        x: &Tensor4<T>,
        scale: &Tensor4<T>,
        shift: &Tensor4<T>,
        running_mean: &Tensor4<T>,
        running_var: &Tensor4<T>,
        eps: f64,
    ) -> Result<Tensor4<T>> {
        ops::batch_norm_infer(x, scale, shift, running_mean, running_var, eps)
    }

    fn dense(
        &mut self,
        x: &Tensor4<T>,
        weights: &Tensor4<T>,
        bias: &Tensor4<T>,
    ) -> Result<Tensor4<T>> {
        ops::dense(x, weights, bias)
    }
}
