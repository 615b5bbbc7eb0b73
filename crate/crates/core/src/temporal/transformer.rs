use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join_name, leaky_relu, leaky_relu_backward, LayerNorm, LayerNormCache, Linear, ParamSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemporalConfig {
    pub layers: usize,
    /// Model width; must equal the per-frame vector width.
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Longest sequence accepted by [`TemporalFusion::fuse`].
    pub max_len: usize,
    /// Add fixed sinusoidal position encodings to the inputs.
    pub positional: bool,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            width: 1024,
            heads: 4,
            ffn: 2048,
            max_len: 30,
            positional: true,
        }
    }
}

impl TemporalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.width == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "temporal width {} must be a positive multiple of the head count {}",
                self.width, self.heads
            )));
        }
        if self.max_len == 0 || self.ffn == 0 {
            return Err(Error::Config("temporal max_len and ffn must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed sinusoidal position table, `len x width`.
///
/// Entries are scaled by `1/√width`, giving rows of norm about 0.7. Frame
/// vectors from a freshly initialized encoder have norm near 1; an unscaled
/// table (row norm `√(width/2)`) drowns them.
pub fn sinusoidal_encoding<T: Scalar>(len: usize, width: usize) -> Array2<T> {
    let amplitude = 1.0 / (width as f64).sqrt();
    Array2::from_shape_fn((len, width), |(pos, c)| {
        let i = (c / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / width as f64);
        T::from_f64(amplitude * if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Post-norm transformer encoder layer: self-attention and a ReLU
/// feed-forward block, each wrapped in a residual and layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub out: Linear<T>,
    pub norm1: LayerNorm<T>,
    pub ff1: Linear<T>,
    pub ff2: Linear<T>,
    pub norm2: LayerNorm<T>,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    input: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    attention: Vec<Array2<T>>,
    context: Array2<T>,
    norm1_out: Array2<T>,
    norm1: LayerNormCache<T>,
    ff_pre: Array2<T>,
    ff_act: Array2<T>,
    norm2: LayerNormCache<T>,
}

impl<T> LayerCache<T> {
    /// Row-stochastic attention matrix of each head.
    pub fn attention(&self) -> &[Array2<T>] {
        &self.attention
    }
}

fn softmax_rows<T: Scalar>(m: &mut Array2<T>) {
    for mut row in m.rows_mut() {
        let max = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

impl<T: Scalar> EncoderLayer<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, heads: usize, ffn: usize, rng: &mut R) -> Self {
        Self {
            query: Linear::new(width, width, rng),
            key: Linear::new(width, width, rng),
            value: Linear::new(width, width, rng),
            out: Linear::new(width, width, rng),
            norm1: LayerNorm::new(width),
            ff1: Linear::new(width, ffn, rng),
            ff2: Linear::new(ffn, width, rng),
            norm2: LayerNorm::new(width),
            heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.query.output_dim() / self.heads
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> (Array2<T>, LayerCache<T>) {
        let (n, width) = x.dim();
        let dh = self.head_dim();
        let scale = T::one() / T::from_usize(dh).sqrt();
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let mut context = Array2::zeros((n, width));
        let mut attention = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut scores);
            context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            attention.push(scores);
        }
        let h1 = &x + &self.out.forward(context.view());
        let (norm1_out, norm1) = self.norm1.forward(h1.view());
        let ff_pre = self.ff1.forward(norm1_out.view());
        let ff_act = leaky_relu(&ff_pre, T::zero());
        let h2 = &norm1_out + &self.ff2.forward(ff_act.view());
        let (y, norm2) = self.norm2.forward(h2.view());
        (
            y,
            LayerCache {
                input: x.to_owned(),
                q,
                k,
                v,
                attention,
                context,
                norm1_out,
                norm1,
                ff_pre,
                ff_act,
                norm2,
            },
        )
    }

    pub fn backward(&self, cache: &LayerCache<T>, grad_out: ArrayView2<'_, T>, grad: &mut EncoderLayer<T>) -> Array2<T> {
        let dh = self.head_dim();
        let scale = T::one() / T::from_usize(dh).sqrt();

        let g_h2 = self.norm2.backward(&cache.norm2, grad_out, &mut grad.norm2);
        let g_act = self.ff2.backward(cache.ff_act.view(), g_h2.view(), &mut grad.ff2);
        let g_pre = leaky_relu_backward(&cache.ff_pre, &g_act, T::zero());
        let g_norm1_out = &g_h2 + &self.ff1.backward(cache.norm1_out.view(), g_pre.view(), &mut grad.ff1);

        let g_h1 = self.norm1.backward(&cache.norm1, g_norm1_out.view(), &mut grad.norm1);
        let g_context = self.out.backward(cache.context.view(), g_h1.view(), &mut grad.out);

        let mut g_q = Array2::zeros(cache.q.raw_dim());
        let mut g_k = Array2::zeros(cache.k.raw_dim());
        let mut g_v = Array2::zeros(cache.v.raw_dim());
        for (h, a) in cache.attention.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let g_o = g_context.slice(cols);
            g_v.slice_mut(cols).assign(&a.t().dot(&g_o));
            let g_a = g_o.dot(&cache.v.slice(cols).t());
            let mut g_s = Array2::zeros(a.raw_dim());
            for i in 0..a.nrows() {
                let dot = a.row(i).dot(&g_a.row(i));
                for j in 0..a.ncols() {
                    g_s[[i, j]] = a[[i, j]] * (g_a[[i, j]] - dot) * scale;
                }
            }
            g_q.slice_mut(cols).assign(&g_s.dot(&cache.k.slice(cols)));
            g_k.slice_mut(cols).assign(&g_s.t().dot(&cache.q.slice(cols)));
        }
        let x = cache.input.view();
        g_h1 + self.query.backward(x, g_q.view(), &mut grad.query)
            + self.key.backward(x, g_k.view(), &mut grad.key)
            + self.value.backward(x, g_v.view(), &mut grad.value)
    }
}

impl<T: Scalar> ParamSet<T> for EncoderLayer<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        self.query.visit(&join_name(prefix, "query"), out);
        self.key.visit(&join_name(prefix, "key"), out);
        self.value.visit(&join_name(prefix, "value"), out);
        self.out.visit(&join_name(prefix, "out"), out);
        self.norm1.visit(&join_name(prefix, "norm1"), out);
        self.ff1.visit(&join_name(prefix, "ff1"), out);
        self.ff2.visit(&join_name(prefix, "ff2"), out);
        self.norm2.visit(&join_name(prefix, "norm2"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        self.query.visit_mut(&join_name(prefix, "query"), out);
        self.key.visit_mut(&join_name(prefix, "key"), out);
        self.value.visit_mut(&join_name(prefix, "value"), out);
        self.out.visit_mut(&join_name(prefix, "out"), out);
        self.norm1.visit_mut(&join_name(prefix, "norm1"), out);
        self.ff1.visit_mut(&join_name(prefix, "ff1"), out);
        self.ff2.visit_mut(&join_name(prefix, "ff2"), out);
        self.norm2.visit_mut(&join_name(prefix, "norm2"), out);
    }
}

/// Stack of encoder layers followed by mean pooling over positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalFusion<T> {
    pub layers: Vec<EncoderLayer<T>>,
    pub positional: bool,
    pub max_len: usize,
}

#[derive(Debug, Clone)]
pub struct FusionCache<T> {
    layers: Vec<LayerCache<T>>,
    len: usize,
}

impl<T> FusionCache<T> {
    pub fn layer(&self, i: usize) -> &LayerCache<T> {
        &self.layers[i]
    }
}

impl<T: Scalar> TemporalFusion<T> {
    pub fn new<R: Rng + ?Sized>(config: &TemporalConfig, rng: &mut R) -> Self {
        Self {
            layers: (0..config.layers)
                .map(|_| EncoderLayer::new(config.width, config.heads, config.ffn, rng))
                .collect(),
            positional: config.positional,
            max_len: config.max_len,
        }
    }

    pub fn width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.query.input_dim())
    }

    /// Fuses an `n x width` sequence into one `width` vector.
    pub fn fuse(&self, seq: ArrayView2<'_, T>) -> Result<Array1<T>> {
        Ok(self.forward(seq)?.0)
    }

    pub fn fuse_vectors(&self, seq: &[Array1<T>]) -> Result<Array1<T>> {
        self.fuse(stack(seq)?.view())
    }

    pub fn forward(&self, seq: ArrayView2<'_, T>) -> Result<(Array1<T>, FusionCache<T>)> {
        let (n, width) = seq.dim();
        if n == 0 {
            return Err(Error::invalid("cannot fuse an empty sequence"));
        }
        if n > self.max_len {
            return Err(Error::invalid(format!(
                "sequence of {n} frames exceeds the maximum of {}",
                self.max_len
            )));
        }
        if width != self.width() {
            return Err(Error::invalid(format!(
                "sequence width {width} does not match model width {}",
                self.width()
            )));
        }
        let mut x = seq.to_owned();
        if self.positional {
            x += &sinusoidal_encoding::<T>(n, width);
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(x.view());
            caches.push(c);
            x = y;
        }
        let pooled = x.sum_axis(Axis(0)) / T::from_usize(n);
        Ok((pooled, FusionCache { layers: caches, len: n }))
    }

    /// Returns `dL/dseq` and accumulates parameter gradients.
    pub fn backward(&self, cache: &FusionCache<T>, grad_out: ArrayView1<'_, T>, grad: &mut TemporalFusion<T>) -> Array2<T> {
        let n = cache.len;
        let share = T::one() / T::from_usize(n);
        let mut g = Array2::from_shape_fn((n, grad_out.len()), |(_, c)| grad_out[c] * share);
        for ((layer, c), gl) in self.layers.iter().zip(&cache.layers).zip(grad.layers.iter_mut()).rev() {
            g = layer.backward(c, g.view(), gl);
        }
        g
    }
}

/// Stacks equal-length vectors as the rows of a matrix.
pub fn stack<T: Scalar>(seq: &[Array1<T>]) -> Result<Array2<T>> {
    let width = seq.first().map_or(0, |v| v.len());
    if seq.iter().any(|v| v.len() != width) {
        return Err(Error::invalid("sequence vectors differ in length"));
    }
    let mut m = Array2::zeros((seq.len(), width));
    for (mut row, v) in m.rows_mut().into_iter().zip(seq) {
        row.assign(v);
    }
    Ok(m)
}

impl<T: Scalar> ParamSet<T> for TemporalFusion<T> {
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
