use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};

use super::params::{join_name, ParamSet};
use crate::scalar::Scalar;

/// Per-row layer normalization with a learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    normalized: Array2<T>,
    inv_std: Array1<T>,
}

const EPS: f64 = 1e-5;

impl<T: Scalar> LayerNorm<T> {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> (Array2<T>, LayerNormCache<T>) {
        let width = T::from_usize(x.ncols());
        let eps = T::from_f64(EPS);
        let mut normalized = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / width;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / width;
            *s = T::one() / (var + eps).sqrt();
            let inv = *s;
            row.mapv_inplace(|v| v * inv);
        }
        let y = &normalized * &self.gamma + &self.beta;
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, grad_out: ArrayView2<'_, T>, grad: &mut LayerNorm<T>) -> Array2<T> {
        grad.gamma += &(&grad_out * &cache.normalized).sum_axis(Axis(0));
        grad.beta += &grad_out.sum_axis(Axis(0));
        let width = T::from_usize(grad_out.ncols());
        let dxhat = &grad_out * &self.gamma;
        let mut dx = Array2::zeros(grad_out.raw_dim());
        for i in 0..grad_out.nrows() {
            let d = dxhat.row(i);
            let xh = cache.normalized.row(i);
            let mean_d = d.sum() / width;
            let mean_dx = d.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / width;
            let s = cache.inv_std[i];
            for c in 0..grad_out.ncols() {
                dx[[i, c]] = s * (d[c] - mean_d - xh[c] * mean_dx);
            }
        }
        dx
    }
}

impl<T: Scalar> ParamSet<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        out.push((join_name(prefix, "gamma"), self.gamma.view().into_dyn()));
        out.push((join_name(prefix, "beta"), self.beta.view().into_dyn()));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        out.push((join_name(prefix, "gamma"), self.gamma.view_mut().into_dyn()));
        out.push((join_name(prefix, "beta"), self.beta.view_mut().into_dyn()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradient, check_params, GRAD_TOL_F64};
    use crate::nn::zeros_like;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ln = LayerNorm::<f64>::new(4);
        ln.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        ln.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(-2.0..2.0));
        let w = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = ln.forward(x.view());
        let mut grad = zeros_like(&ln);
        let dx = ln.backward(&cache, w.view(), &mut grad);

        let flat: Vec<f64> = x.iter().copied().collect();
        let r = check_gradient(
            |p| (ln.forward(Array2::from_shape_vec((3, 4), p.to_vec()).unwrap().view()).0 * &w).sum(),
            &flat,
            dx.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
        let r = check_params(&ln, &grad, 8, |l| (l.forward(x.view()).0 * &w).sum());
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
    }

    #[test]
    fn rows_are_standardized() {
        let ln = LayerNorm::<f64>::new(3);
        let (y, _) = ln.forward(ndarray::array![[1.0, 2.0, 3.0]].view());
        assert!(y.row(0).sum().abs() < 1e-12);
        let var = y.row(0).mapv(|v| v * v).sum() / 3.0;
        assert!((var - 1.0).abs() < 1e-4);
    }
}
