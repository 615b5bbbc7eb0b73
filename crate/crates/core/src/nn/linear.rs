use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::params::{glorot_uniform, join_name, ParamSet};
use crate::scalar::Scalar;

/// Fully connected layer `y = x · weight + bias` over the rows of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: glorot_uniform(input, output, rng),
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<'_, T>, grad_out: ArrayView2<'_, T>, grad: &mut Linear<T>) -> Array2<T> {
        self.accumulate_param_grads(x, grad_out, grad);
        grad_out.dot(&self.weight.t())
    }

    pub fn accumulate_param_grads(&self, x: ArrayView2<'_, T>, grad_out: ArrayView2<'_, T>, grad: &mut Linear<T>) {
        ndarray::linalg::general_mat_mul(T::one(), &x.t(), &grad_out, T::one(), &mut grad.weight);
        grad.bias += &grad_out.sum_axis(Axis(0));
    }
}

impl<T: Scalar> ParamSet<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        out.push((join_name(prefix, "weight"), self.weight.view().into_dyn()));
        out.push((join_name(prefix, "bias"), self.bias.view().into_dyn()));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        out.push((join_name(prefix, "weight"), self.weight.view_mut().into_dyn()));
        out.push((join_name(prefix, "bias"), self.bias.view_mut().into_dyn()));
    }
}
