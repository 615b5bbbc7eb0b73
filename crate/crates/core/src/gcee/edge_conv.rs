use ndarray::{s, Array2, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::NeighborGraph;
use crate::nn::{leaky_relu_backward, Linear, ParamSet, LEAKY_SLOPE};
use crate::scalar::Scalar;

/// Edge convolution: `f'_i = max_{j in N(i)} LeakyReLU([f_i, f_j - f_i] · W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConv<T> {
    /// Maps the `2 * D_in` edge feature to `D_out` channels.
    pub kernel: Linear<T>,
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct EdgeConvCache<T> {
    input: Array2<T>,
    pre: Array2<T>,
    /// Winning neighbor per (point, channel).
    argmax: Vec<u32>,
}

impl<T: Scalar> EdgeConv<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, k: usize, rng: &mut R) -> Self {
        Self {
            kernel: Linear::new(2 * input, output, rng),
            k,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.kernel.input_dim() / 2
    }

    pub fn output_dim(&self) -> usize {
        self.kernel.output_dim()
    }

    /// Backward pass; accumulates kernel gradients into `grad` and returns
    /// `dL/dF`. The neighbor graph is treated as a constant.
    pub fn backward(&self, cache: &EdgeConvCache<T>, grad_out: ArrayView2<'_, T>, grad: &mut EdgeConv<T>) -> Array2<T> {
        let d = self.input_dim();
        let (n, c_out) = cache.pre.dim();
        let slope = T::from_f64(LEAKY_SLOPE);
        let g_center = leaky_relu_backward(&cache.pre, &grad_out.to_owned(), slope);
        // the neighbor term contributes f_j·W_b, the center term f_i·(W_a - W_b)
        let mut g_neighbor = Array2::<T>::zeros((n, c_out));
        for i in 0..n {
            for c in 0..c_out {
                let j = cache.argmax[i * c_out + c] as usize;
                g_neighbor[[j, c]] += g_center[[i, c]];
            }
        }
        let g_b = &g_neighbor - &g_center;
        let wa = self.kernel.weight.slice(s![..d, ..]);
        let wb = self.kernel.weight.slice(s![d.., ..]);
        {
            let mut gw = grad.kernel.weight.slice_mut(s![..d, ..]);
            ndarray::linalg::general_mat_mul(T::one(), &cache.input.t(), &g_center, T::one(), &mut gw);
        }
        {
            let mut gw = grad.kernel.weight.slice_mut(s![d.., ..]);
            ndarray::linalg::general_mat_mul(T::one(), &cache.input.t(), &g_b, T::one(), &mut gw);
        }
        grad.kernel.bias += &g_center.sum_axis(ndarray::Axis(0));
        g_center.dot(&wa.t()) + g_b.dot(&wb.t())
    }
}

/// Runs one edge convolution over `graph`.
pub fn edge_conv<T: Scalar>(
    f: ArrayView2<'_, T>,
    graph: &NeighborGraph,
    layer: &EdgeConv<T>,
) -> Result<(Array2<T>, EdgeConvCache<T>)> {
    let (n, d) = f.dim();
    if graph.num_points() != n {
        return Err(Error::invalid(format!(
            "graph covers {} points but features have {n} rows",
            graph.num_points()
        )));
    }
    if layer.input_dim() != d || layer.kernel.input_dim() != 2 * d {
        return Err(Error::invalid(format!(
            "edge kernel expects {} input channels, features have {d}",
            layer.input_dim()
        )));
    }
    // [f_i, f_j - f_i]·W = f_i·(W_a - W_b) + f_j·W_b
    let wa = layer.kernel.weight.slice(s![..d, ..]);
    let wb = layer.kernel.weight.slice(s![d.., ..]);
    let neighbor_term = f.dot(&wb);
    let center_term = f.dot(&wa) - &neighbor_term + &layer.kernel.bias;
    let c_out = layer.output_dim();
    let mut pre = center_term;
    let mut argmax = vec![0u32; n * c_out];
    for i in 0..n {
        let nbrs = graph.neighbors(i);
        for c in 0..c_out {
            let mut best = T::neg_infinity();
            let mut best_j = nbrs[0];
            for &j in nbrs {
                let v = neighbor_term[[j as usize, c]];
                if v > best {
                    best = v;
                    best_j = j;
                }
            }
            pre[[i, c]] += best;
            argmax[i * c_out + c] = best_j;
        }
    }
    let slope = T::from_f64(LEAKY_SLOPE);
    let out = pre.mapv(|v| if v >= T::zero() { v } else { slope * v });
    Ok((
        out,
        EdgeConvCache {
            input: f.to_owned(),
            pre,
            argmax,
        },
    ))
}

impl<T: Scalar> ParamSet<T> for EdgeConv<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        self.kernel.visit(&crate::nn::join_name(prefix, "kernel"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        self.kernel.visit_mut(&crate::nn::join_name(prefix, "kernel"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::knn;
    use crate::nn::gradcheck::{check_gradient, check_params, GRAD_TOL_F64};
    use crate::nn::{leaky_relu, zeros_like};
    use ndarray::{array, concatenate, Axis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation of the edge-feature definition.
    fn naive(f: ArrayView2<'_, f64>, graph: &NeighborGraph, layer: &EdgeConv<f64>) -> Array2<f64> {
        let n = f.nrows();
        let mut out = Array2::from_elem((n, layer.output_dim()), f64::NEG_INFINITY);
        for i in 0..n {
            for &j in graph.neighbors(i) {
                let fi = f.row(i);
                let diff = &f.row(j as usize) - &fi;
                let edge = concatenate(Axis(0), &[fi, diff.view()]).unwrap().insert_axis(Axis(0));
                let y = leaky_relu(&layer.kernel.forward(edge.view()), 0.2);
                for c in 0..layer.output_dim() {
                    out[[i, c]] = out[[i, c]].max(y[[0, c]]);
                }
            }
        }
        out
    }

    #[test]
    fn self_loop_only_sees_zero_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = EdgeConv::<f64>::new(3, 4, 1, &mut rng);
        let f = array![[0.5, -1.0, 2.0]];
        let g = knn(f.view(), 1, true).unwrap();
        let (out, _) = edge_conv(f.view(), &g, &layer).unwrap();
        let edge = array![[0.5, -1.0, 2.0, 0.0, 0.0, 0.0]];
        let expected = leaky_relu(&layer.kernel.forward(edge.view()), 0.2);
        assert!((out - expected).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn summing_kernel_on_two_points() {
        // features {1, 3}: edges of point 0 are [1, 0] and [1, 2], sums 1 and 3
        let layer = EdgeConv {
            kernel: Linear {
                weight: array![[1.0], [1.0]],
                bias: array![0.0],
            },
            k: 2,
        };
        let f = array![[1.0f64], [3.0]];
        let g = knn(f.view(), 2, true).unwrap();
        let (out, _) = edge_conv(f.view(), &g, &layer).unwrap();
        assert_eq!(out[[0, 0]], 3.0);
        // point 1: edges [3, 0] and [3, -2] give 3 and 1
        assert_eq!(out[[1, 0]], 3.0);
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = EdgeConv::<f64>::new(2, 5, 3, &mut rng);
        let f = Array2::from_shape_fn((6, 2), |(_, c)| c as f64 - 0.3);
        let g = knn(f.view(), 3, true).unwrap();
        let (out, _) = edge_conv(f.view(), &g, &layer).unwrap();
        for i in 1..6 {
            assert_eq!(out.row(i), out.row(0));
        }
    }

    #[test]
    fn matches_naive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = EdgeConv::<f64>::new(3, 6, 4, &mut rng);
        let f = crate::nn::glorot_uniform::<f64, _>(10, 3, &mut rng);
        let g = knn(f.view(), 4, true).unwrap();
        let (out, _) = edge_conv(f.view(), &g, &layer).unwrap();
        let expected = naive(f.view(), &g, &layer);
        assert!((out - expected).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_mismatched_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = EdgeConv::<f64>::new(1, 2, 2, &mut rng);
        let g = knn(array![[0.0], [1.0], [2.0]].view(), 2, true).unwrap();
        assert!(edge_conv(array![[0.0f64], [1.0]].view(), &g, &layer).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = EdgeConv::<f64>::new(3, 4, 3, &mut rng);
        layer.kernel.bias = array![0.05, -0.1, 0.2, 0.0];
        let f = crate::nn::glorot_uniform::<f64, _>(8, 3, &mut rng);
        let w = crate::nn::glorot_uniform::<f64, _>(8, 4, &mut rng);
        let g = knn(f.view(), 3, true).unwrap();
        let (_, cache) = edge_conv(f.view(), &g, &layer).unwrap();
        let mut grad = zeros_like(&layer);
        let gf = layer.backward(&cache, w.view(), &mut grad);
        let r = check_params(&layer, &grad, 64, |l| (edge_conv(f.view(), &g, l).unwrap().0 * &w).sum());
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
        let flat: Vec<f64> = f.iter().copied().collect();
        let r = check_gradient(
            |p| {
                let m = Array2::from_shape_vec((8, 3), p.to_vec()).unwrap();
                (edge_conv(m.view(), &g, &layer).unwrap().0 * &w).sum()
            },
            &flat,
            gf.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
    }
}
