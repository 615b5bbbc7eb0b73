use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneCache};
use super::cfe::{Cfe, CfeCache};
use crate::error::{Error, Result};
use crate::geometry::{knn, NeighborGraph, PointCloud};
use crate::nn::{join_name, ParamSet};
use crate::scalar::Scalar;

/// Encoder hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Points per frame after resampling.
    pub points: usize,
    /// Neighborhood size of every graph convolution.
    pub k: usize,
    /// Neighbors added to the selected point when binarizing.
    pub k_binarize: usize,
    /// Output width of each backbone layer; the last one is `D`.
    pub widths: Vec<usize>,
    /// Width `D_C` of each pooled branch.
    pub d_c: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            points: 256,
            k: 10,
            k_binarize: 8,
            widths: vec![64, 128, 512],
            d_c: 512,
        }
    }
}

impl EncoderConfig {
    /// Width of the per-frame vector `[f_p, f_s]`.
    pub fn latent_dim(&self) -> usize {
        2 * self.d_c
    }

    /// The same architecture with every feature width divided by `divisor`.
    pub fn narrowed(&self, divisor: usize) -> Self {
        Self {
            widths: self.widths.iter().map(|w| (w / divisor).max(1)).collect(),
            d_c: (self.d_c / divisor).max(1),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) || self.d_c == 0 {
            return Err(Error::Config("encoder widths must be non-empty and positive".into()));
        }
        if self.k == 0 || self.points == 0 {
            return Err(Error::Config("encoder k and points must be positive".into()));
        }
        if self.k_binarize == 0 || self.k_binarize + 1 > self.points {
            return Err(Error::Config(format!(
                "k_binarize must be in 1..{} for {} points",
                self.points,
                self.points
            )));
        }
        Ok(())
    }
}

/// Per-frame encoder: dynamic-graph backbone plus complementary extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gcee<T> {
    pub backbone: Backbone<T>,
    pub cfe: Cfe<T>,
}

#[derive(Debug, Clone)]
pub struct SequenceCache<T> {
    backbones: Vec<BackboneCache<T>>,
    cfes: Vec<CfeCache<T>>,
    feature_shape: (usize, usize),
}

impl<T> SequenceCache<T> {
    pub fn cfe(&self, frame: usize) -> &CfeCache<T> {
        &self.cfes[frame]
    }
}

struct FrameState<T> {
    features: Array2<T>,
    graph: NeighborGraph,
    cache: BackboneCache<T>,
}

impl<T: Scalar> Gcee<T> {
    pub fn new<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        let backbone = Backbone::new(&config.widths, config.k, rng);
        let cfe = Cfe::new(backbone.output_dim(), config.d_c, config.k, config.k_binarize, rng);
        Self { backbone, cfe }
    }

    pub fn output_dim(&self) -> usize {
        self.cfe.output_dim()
    }

    /// Backbone features `N x D` of one normalized, resampled frame.
    pub fn backbone_forward(&self, points: ArrayView2<'_, T>) -> Result<Array2<T>> {
        Ok(self.backbone.forward(points)?.0)
    }

    fn frame(&self, points: ArrayView2<'_, T>) -> Result<FrameState<T>> {
        if points.ncols() != 3 || points.nrows() == 0 {
            return Err(Error::invalid(format!("frame must be N x 3 with N > 0, got {:?}", points.dim())));
        }
        if self.cfe.k_binarize + 1 > points.nrows() {
            return Err(Error::invalid(format!(
                "frame of {} points is smaller than the erase region",
                points.nrows()
            )));
        }
        let (features, cache) = self.backbone.forward(points)?;
        let graph = knn(features.view(), self.cfe.frame_graph_k(features.nrows()), true)?;
        Ok(FrameState { features, graph, cache })
    }

    /// One vector per frame. Frame `i` is paired with frame `i + 1` as its
    /// supplement; the last frame supplements itself.
    pub fn encode_sequence(&self, frames: &[Array2<T>]) -> Result<Vec<Array1<T>>> {
        Ok(self.forward_sequence(frames)?.0)
    }

    pub fn encode_clouds(&self, frames: &[PointCloud]) -> Result<Vec<Array1<T>>> {
        let mats: Vec<Array2<T>> = frames.iter().map(|c| c.to_matrix()).collect();
        self.encode_sequence(&mats)
    }

    /// Latent vector of a single frame (the frame is its own supplement).
    pub fn embed_frame(&self, points: ArrayView2<'_, T>) -> Result<Array1<T>> {
        let frames = [points.to_owned()];
        Ok(self.forward_sequence(&frames)?.0.remove(0))
    }

    pub fn forward_sequence(&self, frames: &[Array2<T>]) -> Result<(Vec<Array1<T>>, SequenceCache<T>)> {
        if frames.is_empty() {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        let states = frames.iter().map(|f| self.frame(f.view())).collect::<Result<Vec<_>>>()?;
        let n = states.len();
        let mut outputs = Vec::with_capacity(n);
        let mut cfes = Vec::with_capacity(n);
        for i in 0..n {
            let s = (i + 1).min(n - 1);
            let (v, c) = self.cfe.forward_with_graphs(
                states[i].features.view(),
                &states[i].graph,
                states[s].features.view(),
                &states[s].graph,
            )?;
            outputs.push(v);
            cfes.push(c);
        }
        let feature_shape = states[0].features.dim();
        let backbones = states.into_iter().map(|s| s.cache).collect();
        Ok((
            outputs,
            SequenceCache {
                backbones,
                cfes,
                feature_shape,
            },
        ))
    }

    /// Accumulates gradients for one sequence given `dL/d(frame vector)`.
    pub fn backward_sequence(&self, cache: &SequenceCache<T>, grad_out: &[ArrayView1<'_, T>], grad: &mut Gcee<T>) {
        let n = cache.cfes.len();
        assert_eq!(grad_out.len(), n, "one gradient per frame");
        let mut g_features: Vec<Array2<T>> = (0..n).map(|_| Array2::zeros(cache.feature_shape)).collect();
        for i in 0..n {
            let s = (i + 1).min(n - 1);
            let (gp, gs) = self.cfe.backward(&cache.cfes[i], grad_out[i], &mut grad.cfe);
            g_features[i] += &gp;
            g_features[s] += &gs;
        }
        for (bb, g) in cache.backbones.iter().zip(&g_features) {
            self.backbone.backward(bb, g.view(), &mut grad.backbone);
        }
    }
}

impl<T: Scalar> ParamSet<T> for Gcee<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        self.backbone.visit(&join_name(prefix, "backbone"), out);
        self.cfe.visit(&join_name(prefix, "cfe"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        self.backbone.visit_mut(&join_name(prefix, "backbone"), out);
        self.cfe.visit_mut(&join_name(prefix, "cfe"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_params, GRAD_TOL_F64};
    use crate::nn::{glorot_uniform, zeros_like};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            points: 12,
            k: 4,
            k_binarize: 2,
            widths: vec![4, 6],
            d_c: 3,
        }
    }

    fn frames(rng: &mut ChaCha8Rng, n: usize, points: usize) -> Vec<Array2<f64>> {
        (0..n).map(|_| glorot_uniform::<f64, _>(points, 3, rng)).collect()
    }

    #[test]
    fn default_dimensions() {
        let c = EncoderConfig::default();
        assert_eq!(c.latent_dim(), 1024);
        assert_eq!(c.narrowed(4).widths, vec![16, 32, 128]);
        assert_eq!(c.narrowed(4).latent_dim(), 256);
        c.validate().unwrap();
    }

    #[test]
    fn sequence_shapes_and_empty_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Gcee::<f64>::new(&tiny_config(), &mut rng);
        let fs = frames(&mut rng, 5, 12);
        let out = enc.encode_sequence(&fs).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|v| v.len() == 6));
        assert!(enc.encode_sequence(&[]).is_err());
        let single = enc.encode_sequence(&fs[..1]).unwrap();
        assert_eq!(single[0], enc.embed_frame(fs[0].view()).unwrap());
    }

    #[test]
    fn vector_depends_only_on_its_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = Gcee::<f64>::new(&tiny_config(), &mut rng);
        let mut fs = frames(&mut rng, 5, 12);
        let before = enc.encode_sequence(&fs).unwrap();
        fs[4] = glorot_uniform::<f64, _>(12, 3, &mut rng);
        let after = enc.encode_sequence(&fs).unwrap();
        for i in 0..3 {
            assert_eq!(before[i], after[i]);
        }
        assert_ne!(before[3], after[3]);
    }

    #[test]
    fn sequence_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Gcee::<f64>::new(&tiny_config(), &mut rng);
        let fs = frames(&mut rng, 3, 12);
        let weights: Vec<Array1<f64>> = (0..3).map(|_| glorot_uniform::<f64, _>(1, 6, &mut rng).row(0).to_owned()).collect();
        let loss = |e: &Gcee<f64>| {
            e.encode_sequence(&fs).unwrap().iter().zip(&weights).map(|(v, w)| v.dot(w)).sum::<f64>()
        };
        let (_, cache) = enc.forward_sequence(&fs).unwrap();
        let mut grad = zeros_like(&enc);
        let views: Vec<_> = weights.iter().map(|w| w.view()).collect();
        enc.backward_sequence(&cache, &views, &mut grad);
        let r = check_params(&enc, &grad, 30, loss);
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
    }
}
