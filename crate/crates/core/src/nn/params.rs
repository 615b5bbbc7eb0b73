use ndarray::{Array2, ArrayViewD, ArrayViewMutD, Zip};
use rand::Rng;

use crate::scalar::Scalar;

/// A structure that owns named parameter tensors.
///
/// Implementations list their tensors in a fixed order; two values of the same
/// type built from the same configuration always yield the same names and
/// shapes, which is what lets a gradient container mirror its model.
pub trait ParamSet<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>);
}

pub fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn zero_grads<T: Scalar, M: ParamSet<T>>(m: &mut M) {
    let mut views = Vec::new();
    m.visit_mut("", &mut views);
    for (_, mut v) in views {
        v.fill(T::zero());
    }
}

pub fn zeros_like<T: Scalar, M: ParamSet<T> + Clone>(m: &M) -> M {
    let mut z = m.clone();
    zero_grads(&mut z);
    z
}

/// `dst += src`, tensor by tensor.
pub fn accumulate<T: Scalar, M: ParamSet<T>>(dst: &mut M, src: &M) {
    let mut d = Vec::new();
    dst.visit_mut("", &mut d);
    let mut s = Vec::new();
    src.visit("", &mut s);
    assert_eq!(d.len(), s.len(), "parameter structures differ");
    for ((_, mut dv), (_, sv)) in d.into_iter().zip(s) {
        Zip::from(&mut dv).and(&sv).for_each(|a, &b| *a = *a + b);
    }
}

pub fn scale_grads<T: Scalar, M: ParamSet<T>>(m: &mut M, factor: T) {
    let mut views = Vec::new();
    m.visit_mut("", &mut views);
    for (_, mut v) in views {
        v.mapv_inplace(|x| x * factor);
    }
}

pub fn num_params<T: Scalar, M: ParamSet<T>>(m: &M) -> usize {
    let mut views = Vec::new();
    m.visit("", &mut views);
    views.iter().map(|(_, v)| v.len()).sum()
}

/// Uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::from_f64(rng.random_range(-bound..bound)))
}
