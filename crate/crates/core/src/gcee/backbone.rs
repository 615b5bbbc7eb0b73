use ndarray::{Array2, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::edge_conv::{edge_conv, EdgeConv, EdgeConvCache};
use crate::error::Result;
use crate::geometry::knn;
use crate::nn::{join_name, ParamSet};
use crate::scalar::Scalar;

/// Stacked edge convolutions with the graph rebuilt from each layer's input.
///
/// Layer 0 sees raw coordinates, so its graph is the spatial KNN graph; every
/// later layer connects points that are close in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T> {
    pub layers: Vec<EdgeConv<T>>,
}

#[derive(Debug, Clone)]
pub struct BackboneCache<T> {
    layers: Vec<EdgeConvCache<T>>,
}

impl<T: Scalar> Backbone<T> {
    pub fn new<R: Rng + ?Sized>(widths: &[usize], k: usize, rng: &mut R) -> Self {
        let mut input = 3;
        let layers = widths
            .iter()
            .map(|&w| {
                let layer = EdgeConv::new(input, w, k, rng);
                input = w;
                layer
            })
            .collect();
        Self { layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(3, |l| l.output_dim())
    }

    /// `points` is `N x 3`. Neighborhoods shrink to `N` for clouds smaller
    /// than the configured `k`.
    pub fn forward(&self, points: ArrayView2<'_, T>) -> Result<(Array2<T>, BackboneCache<T>)> {
        let mut x = points.to_owned();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let graph = knn(x.view(), layer.k.min(x.nrows()), true)?;
            let (y, cache) = edge_conv(x.view(), &graph, layer)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, BackboneCache { layers: caches }))
    }

    /// Accumulates parameter gradients; the gradient with respect to the
    /// input coordinates is returned for completeness.
    pub fn backward(&self, cache: &BackboneCache<T>, grad_out: ArrayView2<'_, T>, grad: &mut Backbone<T>) -> Array2<T> {
        let mut g = grad_out.to_owned();
        for ((layer, c), gl) in self.layers.iter().zip(&cache.layers).zip(grad.layers.iter_mut()).rev() {
            g = layer.backward(c, g.view(), gl);
        }
        g
    }
}

impl<T: Scalar> ParamSet<T> for Backbone<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join_name(prefix, &format!("layers.{i}")), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join_name(prefix, &format!("layers.{i}")), out);
        }
    }
}
