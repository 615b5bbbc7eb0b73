use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::edge_conv::{edge_conv, EdgeConv, EdgeConvCache};
use super::eraser::{binarize_with_graph, correlate, erase, EraseMask};
use crate::error::{Error, Result};
use crate::geometry::{knn, NeighborGraph};
use crate::nn::{global_max_pool, global_max_pool_backward, glorot_uniform, join_name, ParamSet};
use crate::scalar::Scalar;

/// Complementary feature extractor: a salient branch for the primary frame,
/// the eraser, and a second branch over the erased supplementary frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Cfe<T> {
    pub primary: EdgeConv<T>,
    pub supplementary: EdgeConv<T>,
    /// Projects pooled primary features (`D_C`) into backbone space (`D`).
    pub omega: Array2<T>,
    pub k_binarize: usize,
}

#[derive(Debug, Clone)]
pub struct SalientCache<T> {
    conv: EdgeConvCache<T>,
    argmax: Vec<usize>,
    rows: usize,
}

#[derive(Debug, Clone)]
pub struct CfeCache<T> {
    primary: SalientCache<T>,
    supplementary: SalientCache<T>,
    mask: EraseMask,
    correlation: Array1<T>,
}

impl<T> CfeCache<T> {
    pub fn mask(&self) -> &EraseMask {
        &self.mask
    }

    pub fn correlation(&self) -> &Array1<T> {
        &self.correlation
    }
}

impl<T: Scalar> Cfe<T> {
    pub fn new<R: Rng + ?Sized>(d: usize, d_c: usize, k: usize, k_binarize: usize, rng: &mut R) -> Self {
        Self {
            primary: EdgeConv::new(d, d_c, k, rng),
            supplementary: EdgeConv::new(d, d_c, k, rng),
            omega: glorot_uniform(d_c, d, rng),
            k_binarize,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.primary.output_dim() + self.supplementary.output_dim()
    }

    /// Neighborhood size that serves both the primary graph convolution and
    /// the binarization of the same frame.
    pub fn frame_graph_k(&self, points: usize) -> usize {
        self.primary.k.max(self.k_binarize + 1).min(points)
    }

    /// Graph convolution over a fresh feature-space graph, then max-pooling.
    pub fn salient_pool(layer: &EdgeConv<T>, f: ArrayView2<'_, T>) -> Result<(Array1<T>, SalientCache<T>)> {
        let graph = knn(f, layer.k.min(f.nrows()), true)?;
        Self::salient_pool_with_graph(layer, f, &graph)
    }

    fn salient_pool_with_graph(
        layer: &EdgeConv<T>,
        f: ArrayView2<'_, T>,
        graph: &NeighborGraph,
    ) -> Result<(Array1<T>, SalientCache<T>)> {
        let graph = if graph.k() > layer.k.min(f.nrows()) {
            graph.truncated(layer.k.min(f.nrows()))?
        } else {
            graph.clone()
        };
        let (conv_out, conv) = edge_conv(f, &graph, layer)?;
        let (pooled, argmax) = global_max_pool(conv_out.view())?;
        Ok((
            pooled,
            SalientCache {
                conv,
                argmax,
                rows: f.nrows(),
            },
        ))
    }

    pub fn salient_pool_backward(
        layer: &EdgeConv<T>,
        cache: &SalientCache<T>,
        grad_out: ArrayView1<'_, T>,
        grad: &mut EdgeConv<T>,
    ) -> Array2<T> {
        let g = global_max_pool_backward(&cache.argmax, grad_out, cache.rows);
        layer.backward(&cache.conv, g.view(), grad)
    }

    /// `f_cfe = [f_p, f_s]` for a primary/supplementary pair of backbone outputs.
    pub fn forward(&self, f_primary: ArrayView2<'_, T>, f_supplementary: ArrayView2<'_, T>) -> Result<(Array1<T>, CfeCache<T>)> {
        let kp = self.frame_graph_k(f_primary.nrows());
        let gp = knn(f_primary, kp, true)?;
        let ks = self.frame_graph_k(f_supplementary.nrows());
        let gs = knn(f_supplementary, ks, true)?;
        self.forward_with_graphs(f_primary, &gp, f_supplementary, &gs)
    }

    /// As [`Cfe::forward`] with precomputed self-inclusive feature graphs of
    /// at least [`Cfe::frame_graph_k`] neighbors.
    pub fn forward_with_graphs(
        &self,
        f_primary: ArrayView2<'_, T>,
        graph_primary: &NeighborGraph,
        f_supplementary: ArrayView2<'_, T>,
        graph_supplementary: &NeighborGraph,
    ) -> Result<(Array1<T>, CfeCache<T>)> {
        if f_primary.dim() != f_supplementary.dim() {
            return Err(Error::invalid(format!(
                "primary {:?} and supplementary {:?} features differ in shape",
                f_primary.dim(),
                f_supplementary.dim()
            )));
        }
        let (f_p, primary) = Self::salient_pool_with_graph(&self.primary, f_primary, graph_primary)?;
        let correlation = correlate(f_supplementary, f_p.view(), self.omega.view())?;
        let mask = binarize_with_graph(correlation.view(), graph_supplementary, self.k_binarize)?;
        let erased = erase(f_supplementary, &mask)?;
        let (f_s, supplementary) = Self::salient_pool(&self.supplementary, erased.view())?;
        let mut out = Array1::zeros(f_p.len() + f_s.len());
        out.slice_mut(s![..f_p.len()]).assign(&f_p);
        out.slice_mut(s![f_p.len()..]).assign(&f_s);
        Ok((
            out,
            CfeCache {
                primary,
                supplementary,
                mask,
                correlation,
            },
        ))
    }

    /// Returns `(dL/dF_primary, dL/dF_supplementary)`. Mask selection is a hard
    /// decision, so no gradient reaches `omega` or flows back through the
    /// correlation; erased rows receive zero gradient.
    pub fn backward(&self, cache: &CfeCache<T>, grad_out: ArrayView1<'_, T>, grad: &mut Cfe<T>) -> (Array2<T>, Array2<T>) {
        let d_p = self.primary.output_dim();
        let g_primary = Self::salient_pool_backward(&self.primary, &cache.primary, grad_out.slice(s![..d_p]), &mut grad.primary);
        let mut g_supp = Self::salient_pool_backward(
            &self.supplementary,
            &cache.supplementary,
            grad_out.slice(s![d_p..]),
            &mut grad.supplementary,
        );
        for i in cache.mask.erased() {
            g_supp.row_mut(i).fill(T::zero());
        }
        (g_primary, g_supp)
    }
}

impl<T: Scalar> ParamSet<T> for Cfe<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        self.primary.visit(&join_name(prefix, "primary"), out);
        self.supplementary.visit(&join_name(prefix, "supplementary"), out);
        out.push((join_name(prefix, "omega"), self.omega.view().into_dyn()));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        self.primary.visit_mut(&join_name(prefix, "primary"), out);
        self.supplementary.visit_mut(&join_name(prefix, "supplementary"), out);
        out.push((join_name(prefix, "omega"), self.omega.view_mut().into_dyn()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradient, check_params, GRAD_TOL_F64};
    use crate::nn::zeros_like;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Cfe<f64>, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfe = Cfe::<f64>::new(5, 4, 3, 2, &mut rng);
        let fp = glorot_uniform::<f64, _>(12, 5, &mut rng);
        let fs = glorot_uniform::<f64, _>(12, 5, &mut rng);
        (cfe, fp, fs)
    }

    #[test]
    fn output_layout() {
        let (cfe, fp, fs) = setup(1);
        let (out, cache) = cfe.forward(fp.view(), fs.view()).unwrap();
        assert_eq!(out.len(), 8);
        let (f_p, _) = Cfe::salient_pool(&cfe.primary, fp.view()).unwrap();
        assert_eq!(out.slice(s![..4]), f_p);
        assert_eq!(cache.mask().zero_count(), 3);
    }

    #[test]
    fn duplicated_frame_still_erases() {
        let (cfe, fp, _) = setup(2);
        let (out, cache) = cfe.forward(fp.view(), fp.view()).unwrap();
        assert_eq!(out.len(), 8);
        assert_eq!(cache.mask().zero_count(), 3);
    }

    #[test]
    fn salient_pool_is_row_permutation_invariant() {
        let (cfe, fp, _) = setup(3);
        let perm = [3usize, 0, 7, 1, 11, 2, 9, 4, 6, 10, 5, 8];
        let permuted = Array2::from_shape_fn(fp.dim(), |(i, c)| fp[[perm[i], c]]);
        let (a, _) = Cfe::salient_pool(&cfe.primary, fp.view()).unwrap();
        let (b, _) = Cfe::salient_pool(&cfe.primary, permuted.view()).unwrap();
        assert!((a - b).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn salient_pool_gradients() {
        let (cfe, fp, _) = setup(4);
        let w = Array1::from(vec![0.5, -1.0, 0.25, 2.0]);
        let (_, cache) = Cfe::salient_pool(&cfe.primary, fp.view()).unwrap();
        let mut grad = zeros_like(&cfe.primary);
        Cfe::salient_pool_backward(&cfe.primary, &cache, w.view(), &mut grad);
        let r = check_params(&cfe.primary, &grad, 40, |l| Cfe::salient_pool(l, fp.view()).unwrap().0.dot(&w));
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
    }

    #[test]
    fn full_forward_gradients() {
        let (cfe, fp, fs) = setup(5);
        let w = Array1::from(vec![0.5, -1.0, 0.25, 2.0, 1.0, -0.3, 0.8, 0.1]);
        let (_, cache) = cfe.forward(fp.view(), fs.view()).unwrap();
        let mut grad = zeros_like(&cfe);
        let (gp, gs) = cfe.backward(&cache, w.view(), &mut grad);
        let r = check_params(&cfe, &grad, 40, |c| c.forward(fp.view(), fs.view()).unwrap().0.dot(&w));
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
        assert!(grad.omega.iter().all(|v| *v == 0.0));

        let flat: Vec<f64> = fp.iter().copied().collect();
        let r = check_gradient(
            |p| {
                let m = Array2::from_shape_vec(fp.dim(), p.to_vec()).unwrap();
                cfe.forward(m.view(), fs.view()).unwrap().0.dot(&w)
            },
            &flat,
            gp.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
        let flat: Vec<f64> = fs.iter().copied().collect();
        let r = check_gradient(
            |p| {
                let m = Array2::from_shape_vec(fs.dim(), p.to_vec()).unwrap();
                cfe.forward(fp.view(), m.view()).unwrap().0.dot(&w)
            },
            &flat,
            gs.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
    }
}
